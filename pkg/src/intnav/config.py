"""Experiment configuration: one tree-structured YAML file per run.

Every run writes its resolved config beside its outputs so any result
directory can be regenerated from the embedded config and seeds alone.
Seeds are required to be explicit in the file (no silent defaults).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .geometry import Pose2
from .models import DynamicsConfig, PerceptionConfig, TrainConfig
from .nn import AdamConfig
from .planner import CemConfig, MppiConfig, RewardFunction, parse_reward
from .sim import DynamicsVariant, RenderConfig, World, WorldConfig, parse_variant


class ConfigError(ValueError):
    """Invalid experiment configuration; message names the offending field."""


@dataclass
class CollectSection:
    policy: str = "correlated_random_walk"
    beta: float = 0.8
    episodes: int = 50
    max_steps: int = 100
    min_transitions: int | None = None
    record_observations: bool = True
    arena: str = "cluttered"  # cluttered: the evaluation room; open: empty arena
    arena_size: float = 60.0
    seed: int = 0


@dataclass
class TrainerSection:
    batch_size: int = 32
    steps: int = 3000
    learning_rate: float = 1e-4
    weight_decay: float = 0.5
    grad_clip_norm: float = 10.0
    collision_rebalance: float | None = None
    source_ratios: tuple[float, ...] | None = None
    val_fraction: float = 0.1
    val_every: int = 200
    seed: int = 0
    latent_dim: int = 128
    conv_channels: tuple[int, ...] = (8, 16, 16)
    conv_strides: tuple[int, ...] = (2, 2, 1)
    kernel: int = 3
    head_hidden: tuple[int, ...] = (64, 64)
    dyn_hidden: tuple[int, ...] = (64, 64)


@dataclass
class EvalSection:
    starts: int = 5
    trials: int = 5
    max_steps: int = 140
    seed: int = 0
    start_margin: float = 1.0


@dataclass
class ExperimentConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    dt: float = 0.25
    speed: float = 1.0
    variant: DynamicsVariant = field(default_factory=lambda: parse_variant("normal"))
    horizon: int = 6
    goal: tuple[float, float] | None = (0.0, 4.5)
    collect: CollectSection = field(default_factory=CollectSection)
    trainer: TrainerSection = field(default_factory=TrainerSection)
    solver: CemConfig | MppiConfig = field(default_factory=CemConfig)
    reward: RewardFunction = None  # set in load
    evaluation: EvalSection = field(default_factory=EvalSection)


_REQUIRED_SEEDS = (
    ("world", "rng_seed"),
    ("collect", "seed"),
    ("trainer", "seed"),
    ("evaluation", "seed"),
)


def _build(section: str, ctor, raw: dict, tuple_fields: tuple[str, ...] = ()):
    if not isinstance(raw, dict):
        raise ConfigError(f"{section}: expected a mapping, got {type(raw).__name__}")
    kwargs = dict(raw)
    for tf in tuple_fields:
        if tf in kwargs and kwargs[tf] is not None:
            kwargs[tf] = tuple(kwargs[tf])
    try:
        return ctor(**kwargs)
    except TypeError as err:
        raise ConfigError(f"{section}: {err}") from err
    except ValueError as err:
        raise ConfigError(f"{section}: {err}") from err


def load_config(path) -> ExperimentConfig:
    """Parse and validate an experiment config file."""
    p = Path(path)
    try:
        raw = yaml.safe_load(p.read_text())
    except OSError as err:
        raise ConfigError(f"cannot read config {p}: {err}") from err
    except yaml.YAMLError as err:
        raise ConfigError(f"{p}: YAML parse error: {err}") from err
    if not isinstance(raw, dict):
        raise ConfigError(f"{p}: config root must be a mapping")
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> ExperimentConfig:
    for sec, key in _REQUIRED_SEEDS:
        if not isinstance(raw.get(sec), dict) or key not in raw[sec]:
            raise ConfigError(f"{sec}.{key}: seeds must be explicit in the config file")
    cfg = ExperimentConfig()
    cfg.world = _build("world", WorldConfig, raw.get("world", {}), ("obstacle_radius_range",))
    cfg.render = _build("render", RenderConfig, raw.get("render", {}))
    sim = raw.get("sim", {})
    cfg.dt = float(sim.get("dt", 0.25))
    cfg.speed = float(sim.get("speed", 1.0))
    if cfg.dt <= 0 or cfg.speed <= 0:
        raise ConfigError("sim: dt and speed must be positive")
    try:
        cfg.variant = parse_variant(raw.get("variant", "normal"))
    except ValueError as err:
        raise ConfigError(f"variant: {err}") from err
    cfg.horizon = int(raw.get("horizon", 6))
    if cfg.horizon < 1:
        raise ConfigError("horizon: must be >= 1")
    goal = raw.get("goal", (0.0, 4.5))
    cfg.goal = None if goal is None else (float(goal[0]), float(goal[1]))
    cfg.collect = _build("collect", CollectSection, raw.get("collect", {}))
    if cfg.collect.arena not in ("cluttered", "open"):
        raise ConfigError(f"collect.arena: must be cluttered or open, got {cfg.collect.arena!r}")
    cfg.trainer = _build(
        "trainer", TrainerSection, raw.get("trainer", {}),
        ("source_ratios", "conv_channels", "conv_strides", "head_hidden", "dyn_hidden"),
    )
    solver_raw = dict(raw.get("solver", {}))
    kind = str(solver_raw.pop("kind", "cem")).lower()
    if kind == "cem":
        solver_raw.pop("temperature", None)
        solver_raw.pop("noise_std", None)
        cfg.solver = _build("solver", CemConfig, solver_raw)
    elif kind == "mppi":
        solver_raw.pop("elite_fraction", None)
        solver_raw.pop("iterations", None)
        solver_raw.pop("init_std", None)
        solver_raw.pop("min_std", None)
        cfg.solver = _build("solver", MppiConfig, solver_raw)
    else:
        raise ConfigError(f"solver.kind: must be cem or mppi, got {kind!r}")
    try:
        cfg.reward = parse_reward(raw.get("reward", {"kind": "heading"}))
    except ValueError as err:
        raise ConfigError(f"reward: {err}") from err
    cfg.evaluation = _build("evaluation", EvalSection, raw.get("evaluation", {}))
    if cfg.evaluation.starts < 1 or cfg.evaluation.trials < 1:
        raise ConfigError("evaluation: starts and trials must be >= 1")
    return cfg


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Resolved config as a plain tree (inverse of config_from_dict)."""
    solver: dict = {"kind": "cem" if isinstance(cfg.solver, CemConfig) else "mppi"}
    for k, v in vars(cfg.solver).items():
        solver[k] = v
    reward: dict = {
        "kind": {"HeadingReward": "heading", "PointGoalReward": "point_goal", "MinTurnReward": "min_turn"}[
            type(cfg.reward).__name__
        ]
    }
    reward.update(vars(cfg.reward))
    return {
        "world": {**vars(cfg.world), "obstacle_radius_range": list(cfg.world.obstacle_radius_range)},
        "render": dict(vars(cfg.render)),
        "sim": {"dt": cfg.dt, "speed": cfg.speed},
        "variant": {"name": cfg.variant.name, "lag_steps": cfg.variant.lag_steps},
        "horizon": cfg.horizon,
        "goal": None if cfg.goal is None else list(cfg.goal),
        "collect": dict(vars(cfg.collect)),
        "trainer": {
            k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(cfg.trainer).items()
        },
        "solver": solver,
        "reward": reward,
        "evaluation": dict(vars(cfg.evaluation)),
    }


def dump_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=True))


def eval_starts(cfg: ExperimentConfig) -> list[Pose2]:
    """Deterministic start poses: evenly spaced across the bottom of the
    room, facing the goal end (+y)."""
    w = cfg.world
    margin = w.robot_radius + cfg.evaluation.start_margin
    y = -w.room_length / 2.0 + margin
    n = cfg.evaluation.starts
    if n == 1:
        xs = [0.0]
    else:
        span = w.room_width / 2.0 - margin
        xs = [-span + 2.0 * span * i / (n - 1) for i in range(n)]
    return [Pose2(x, y, 0.0) for x in xs]


def make_eval_world(cfg: ExperimentConfig) -> tuple[World, list[Pose2]]:
    """The cluttered evaluation room with keepout at starts and goal."""
    starts = eval_starts(cfg)
    keep = tuple((p.x, p.y, cfg.world.robot_radius + 0.6) for p in starts)
    try:
        world = World.build(cfg.world, goal=cfg.goal, keepout=keep)
    except ValueError as err:
        raise ConfigError(f"world: {err}") from err
    return world, starts


def make_collect_world(cfg: ExperimentConfig) -> World:
    """World used for data collection per collect.arena."""
    if cfg.collect.arena == "cluttered":
        return make_eval_world(cfg)[0]
    side = cfg.collect.arena_size
    open_cfg = WorldConfig(
        room_width=side,
        room_length=side,
        obstacle_grid_rows=0,
        obstacle_grid_cols=0,
        obstacle_radius_range=cfg.world.obstacle_radius_range,
        placement_jitter=0.0,
        robot_radius=cfg.world.robot_radius,
        goal_radius=cfg.world.goal_radius,
        rng_seed=cfg.world.rng_seed,
    )
    return World.build(open_cfg)


def build_perception_config(cfg: ExperimentConfig) -> PerceptionConfig:
    t, r = cfg.trainer, cfg.render
    return PerceptionConfig(
        horizon=cfg.horizon,
        frames=r.frames,
        rows=r.rows,
        cols=r.cols,
        conv_channels=t.conv_channels,
        conv_strides=t.conv_strides,
        kernel=t.kernel,
        latent_dim=t.latent_dim,
        head_hidden=t.head_hidden,
    )


def build_dynamics_config(cfg: ExperimentConfig) -> DynamicsConfig:
    return DynamicsConfig(
        horizon=cfg.horizon,
        state_dim=cfg.variant.state_dim,
        hidden=cfg.trainer.dyn_hidden,
    )


def build_train_config(cfg: ExperimentConfig, kind: str) -> TrainConfig:
    t = cfg.trainer
    try:
        return TrainConfig(
            batch_size=t.batch_size,
            steps=t.steps,
            adam=AdamConfig(
                learning_rate=t.learning_rate,
                weight_decay=t.weight_decay,
                grad_clip_norm=t.grad_clip_norm,
            ),
            collision_rebalance=t.collision_rebalance if kind == "perception" else None,
            source_ratios=t.source_ratios,
            horizon=cfg.horizon,
            val_fraction=t.val_fraction,
            val_every=t.val_every,
            seed=t.seed,
        )
    except ValueError as err:
        raise ConfigError(f"trainer: {err}") from err
