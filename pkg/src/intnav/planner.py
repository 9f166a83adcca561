"""Sampling-based planning over the integrated model.

Provides the task reward functions, CEM and MPPI solvers, the receding-
horizon MPC loop (replan every simulator step, execute the first action),
and the conventional-hierarchy baseline that first plans kinematic
waypoints against the perception model alone and then tracks them with
the dynamics model.

Candidate evaluation is vectorized over the whole population, which makes
it deterministic regardless of scheduling; the MPC loop itself is
sequential.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .geometry import HeadingGoal, PointGoal, Pose2, bearing_angles, heading_to, point_in_body_frame
from .models import DynamicsModel, IntegratedModel, PerceptionModel
from .sim import (
    ACTION_EPS,
    DynamicsVariant,
    NORMAL,
    RenderConfig,
    World,
    goal_reached,
    initial_state,
    min_clearance,
    observation_from_scans,
    render_scan,
    robot_state_vector,
    step_dynamics,
)

log = logging.getLogger(__name__)


class PlannerError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# reward functions

@dataclass(frozen=True)
class HeadingReward:
    """Drive in the direction of a relative goal angle; penalty on the
    cumulative-yaw distance to it."""

    coef: float = 0.01

    def __post_init__(self):
        if self.coef < 0:
            raise ValueError("coef must be nonnegative")


@dataclass(frozen=True)
class PointGoalReward:
    """Drive toward a goal point: bearing-angle and path-magnitude penalties."""

    angle_coef: float = 0.3
    magnitude_coef: float = 0.05

    def __post_init__(self):
        if self.angle_coef < 0 or self.magnitude_coef < 0:
            raise ValueError("coefficients must be nonnegative")


@dataclass(frozen=True)
class MinTurnReward:
    """Avoid collisions with minimal maneuvering (no goal)."""


RewardFunction = HeadingReward | PointGoalReward | MinTurnReward


def parse_reward(spec) -> RewardFunction:
    if isinstance(spec, (HeadingReward, PointGoalReward, MinTurnReward)):
        return spec
    if isinstance(spec, str):
        spec = {"kind": spec}
    kind = str(spec.get("kind", "")).strip().lower()
    if kind == "heading":
        return HeadingReward(coef=float(spec.get("coef", 0.01)))
    if kind == "point_goal":
        return PointGoalReward(
            angle_coef=float(spec.get("angle_coef", 0.3)),
            magnitude_coef=float(spec.get("magnitude_coef", 0.05)),
        )
    if kind == "min_turn":
        return MinTurnReward()
    raise ValueError(f"unknown reward function {kind!r}; valid: heading, point_goal, min_turn")


def evaluate_rewards(rf: RewardFunction, rhat: np.ndarray, dp: np.ndarray, actions, goal) -> np.ndarray:
    """Batched planning objective: rhat (N, H), dp (N, H, 3) -> (N,)."""
    rhat = np.asarray(rhat, dtype=np.float64)
    dp = np.asarray(dp, dtype=np.float64)
    if rhat.ndim != 2 or dp.shape != rhat.shape + (3,):
        raise ValueError(f"reward/delta shapes disagree: {rhat.shape} vs {dp.shape}")
    base = rhat.sum(axis=1)
    if isinstance(rf, HeadingReward):
        if not isinstance(goal, HeadingGoal):
            raise ValueError(f"{type(rf).__name__} needs a HeadingGoal, got {type(goal).__name__}")
        return base - rf.coef * np.abs(dp[:, :, 2] - goal.angle).sum(axis=1)
    if isinstance(rf, PointGoalReward):
        if not isinstance(goal, PointGoal):
            raise ValueError(f"{type(rf).__name__} needs a PointGoal, got {type(goal).__name__}")
        ang = bearing_angles(dp[:, :, :2], goal).sum(axis=1)
        mag = np.abs(dp).sum(axis=(1, 2))
        return base - rf.angle_coef * ang - rf.magnitude_coef * mag
    if isinstance(rf, MinTurnReward):
        if goal is not None:
            raise ValueError(f"{type(rf).__name__} takes no goal, got {type(goal).__name__}")
        return base - np.abs(dp).sum(axis=(1, 2))
    raise TypeError(f"unknown reward function {rf!r}")


def evaluate_reward(rf: RewardFunction, rhat, dp, actions, goal) -> float:
    """Single-sequence planning objective (H,), (H, 3) -> scalar."""
    r = np.asarray(rhat, dtype=np.float64)[None, :]
    d = np.asarray(dp, dtype=np.float64)[None, :, :]
    a = None if actions is None else np.asarray(actions, dtype=np.float64)[None, :]
    return float(evaluate_rewards(rf, r, d, a, goal)[0])


# ---------------------------------------------------------------------------
# solvers

@dataclass(frozen=True)
class CemConfig:
    population: int = 128
    elite_fraction: float = 0.1
    iterations: int = 3
    init_std: float | None = None  # default: half the bound range
    min_std: float = 0.05
    warm_start: bool = True

    def __post_init__(self):
        if self.population * self.elite_fraction < 2:
            raise ValueError("population * elite_fraction must be >= 2")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


@dataclass(frozen=True)
class MppiConfig:
    population: int = 128
    temperature: float = 0.05
    noise_std: float | None = None  # default: quarter of the bound range
    warm_start: bool = True

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.population < 1:
            raise ValueError("population must be >= 1")


@dataclass
class PlanResult:
    """Chosen action sequence with its model predictions and objective."""

    actions: np.ndarray  # (H,)
    rewards: np.ndarray  # (H,)
    deltas: np.ndarray  # (H, 3)
    objective: float
    candidates: np.ndarray | None = None  # (N, H) diagnostics
    candidate_objectives: np.ndarray | None = None

    def __post_init__(self):
        if self.candidate_objectives is not None and len(self.candidate_objectives):
            if self.objective < self.candidate_objectives.max():
                raise ValueError("PlanResult objective below a retained candidate's objective")


def _clip_bounds(bounds: tuple[float, float]) -> tuple[float, float]:
    lo, hi = bounds
    return lo + ACTION_EPS, hi - ACTION_EPS


def cem_optimize(
    objective,
    horizon: int,
    bounds: tuple[float, float],
    cfg: CemConfig,
    rng: np.random.Generator,
    init_mean: np.ndarray | None = None,
    init_std: np.ndarray | float | None = None,
    keep_candidates: bool = False,
):
    """Iterative elite-refit Gaussian search over (population, horizon)
    action matrices. ``objective`` maps an (N, H) batch to (N,) values.
    Returns (best_x, best_objective, candidates, candidate_objectives);
    the best pair is the best ever seen, so it is monotone across
    iterations."""
    lo, hi = _clip_bounds(bounds)
    mean = (
        np.full(horizon, 0.5 * (lo + hi)) if init_mean is None else np.asarray(init_mean, dtype=np.float64).copy()
    )
    if init_std is None:
        init_std = cfg.init_std if cfg.init_std is not None else 0.5 * (hi - lo)
    std = np.broadcast_to(np.asarray(init_std, dtype=np.float64), (horizon,)).copy()
    n_elite = max(2, int(cfg.population * cfg.elite_fraction))
    best_x: np.ndarray | None = None
    best_obj = -math.inf
    kept_x, kept_obj = [], []
    for _ in range(cfg.iterations):
        x = np.clip(mean + std * rng.standard_normal((cfg.population, horizon)), lo, hi)
        obj = np.asarray(objective(x), dtype=np.float64)
        finite = np.isfinite(obj)
        if not finite.all():
            log.warning("cem: discarding %d non-finite candidates", int((~finite).sum()))
            x, obj = x[finite], obj[finite]
        if len(obj) == 0:
            raise PlannerError("cem: all candidates had non-finite objectives")
        if keep_candidates:
            kept_x.append(x)
            kept_obj.append(obj)
        order = np.argsort(-obj, kind="stable")
        if obj[order[0]] > best_obj:
            best_obj = float(obj[order[0]])
            best_x = x[order[0]].copy()
        elites = x[order[: min(n_elite, len(obj))]]
        mean = elites.mean(axis=0)
        std = np.maximum(elites.std(axis=0), cfg.min_std)
    cands = np.concatenate(kept_x) if kept_x else None
    cobjs = np.concatenate(kept_obj) if kept_obj else None
    return best_x, best_obj, cands, cobjs


def mppi_weights(objectives: np.ndarray, temperature: float) -> np.ndarray:
    """Softmax weights exp((R - max R) / temperature), normalized to sum 1."""
    obj = np.asarray(objectives, dtype=np.float64)
    w = np.exp((obj - obj.max()) / temperature)
    return w / w.sum()


class _Scorer:
    """Caches the perception latent of one observation and scores candidate
    action batches through dynamics + reward."""

    def __init__(self, model: IntegratedModel, obs, svec, rf, goal):
        self.model = model
        self.latent = model.perception.encode_single(np.asarray(obs, dtype=np.float64))
        self.svec = np.asarray(svec, dtype=np.float64)
        self.rf = rf
        self.goal = goal

    def predictions(self, x: np.ndarray):
        dp = self.model.dynamics.predict(self.svec, x)
        rhat = self.model.perception.rewards_for(self.latent, dp)
        return rhat, dp

    def __call__(self, x: np.ndarray) -> np.ndarray:
        rhat, dp = self.predictions(x)
        return evaluate_rewards(self.rf, rhat, dp, x, self.goal)


def plan_cem(
    model: IntegratedModel,
    obs,
    svec,
    goal,
    rf: RewardFunction,
    bounds: tuple[float, float],
    cfg: CemConfig,
    rng: np.random.Generator,
    init_mean: np.ndarray | None = None,
    keep_candidates: bool = False,
) -> PlanResult:
    scorer = _Scorer(model, obs, svec, rf, goal)
    best_x, best_obj, cands, cobjs = cem_optimize(
        scorer, model.horizon, bounds, cfg, rng, init_mean=init_mean, keep_candidates=keep_candidates
    )
    rhat, dp = scorer.predictions(best_x[None, :])
    return PlanResult(
        actions=best_x,
        rewards=rhat[0],
        deltas=dp[0],
        objective=best_obj,
        candidates=cands,
        candidate_objectives=cobjs,
    )


def plan_mppi(
    model: IntegratedModel,
    obs,
    svec,
    goal,
    rf: RewardFunction,
    bounds: tuple[float, float],
    cfg: MppiConfig,
    rng: np.random.Generator,
    nominal: np.ndarray | None = None,
) -> PlanResult:
    """Noise-perturbed weighted averaging around a nominal sequence.

    Returns the softmax-weighted average of the sampled candidates (not the
    argmax), so no candidate list is retained on the result.
    """
    lo, hi = _clip_bounds(bounds)
    h = model.horizon
    if nominal is None:
        nominal = np.full(h, 0.5 * (lo + hi))
    noise_std = cfg.noise_std if cfg.noise_std is not None else 0.25 * (hi - lo)
    scorer = _Scorer(model, obs, svec, rf, goal)
    x = np.clip(nominal + noise_std * rng.standard_normal((cfg.population, h)), lo, hi)
    obj = scorer(x)
    finite = np.isfinite(obj)
    if not finite.all():
        log.warning("mppi: discarding %d non-finite candidates", int((~finite).sum()))
        x, obj = x[finite], obj[finite]
    if len(obj) == 0:
        raise PlannerError("mppi: all candidates had non-finite objectives")
    w = mppi_weights(obj, cfg.temperature)
    avg = np.clip(w @ x, lo, hi)
    rhat, dp = scorer.predictions(avg[None, :])
    return PlanResult(
        actions=avg,
        rewards=rhat[0],
        deltas=dp[0],
        objective=float(evaluate_rewards(rf, rhat, dp, avg[None, :], goal)[0]),
    )


# ---------------------------------------------------------------------------
# conventional hierarchy baseline

def unicycle_deltas(rates: np.ndarray, dt: float, speed: float) -> np.ndarray:
    """Closed-form cumulative deltas for constant-speed yaw-rate sequences.

    This is the generic kinematic prior of the hierarchy's high level; it
    is deliberately unaware of the deployment variant.
    """
    theta = np.cumsum(dt * rates, axis=1)
    dx = np.cumsum(dt * speed * -np.sin(theta), axis=1)
    dy = np.cumsum(dt * speed * np.cos(theta), axis=1)
    return np.stack([dx, dy, theta], axis=2)


@dataclass
class HierarchyPlan:
    """Step-2 plan plus the step-1 waypoints it tried to track."""

    plan: PlanResult
    waypoint_deltas: np.ndarray  # (H, 3) the delta sequence chosen in step 1
    waypoint_rates: np.ndarray  # (H,) yaw rates generating those deltas
    tracking_residual: float  # step-2 objective value at the chosen actions


def plan_hierarchy(
    perception: PerceptionModel,
    dynamics: DynamicsModel,
    obs,
    svec,
    goal,
    rf: RewardFunction,
    kin_bounds: tuple[float, float],
    bounds: tuple[float, float],
    cfg: CemConfig,
    rng: np.random.Generator,
    dt: float = 0.25,
    speed: float = 1.0,
    init_rates: np.ndarray | None = None,
    init_actions: np.ndarray | None = None,
) -> HierarchyPlan:
    """Two-step optimization: pick waypoint deltas against the perception
    model only (kinematic prior in ``kin_bounds``), then pick actions that
    minimize squared tracking error through the dynamics model. The
    perception model is never queried during step 2; the returned plan's
    objective is a post-hoc integrated re-evaluation for reporting."""
    if perception.horizon != dynamics.horizon:
        raise ValueError("perception/dynamics horizon mismatch")
    h = perception.horizon
    svec = np.asarray(svec, dtype=np.float64)
    latent = perception.encode_single(np.asarray(obs, dtype=np.float64))

    def objective_waypoints(u: np.ndarray) -> np.ndarray:
        dp = unicycle_deltas(u, dt, speed)
        rhat = perception.rewards_for(latent, dp)
        return evaluate_rewards(rf, rhat, dp, u, goal)

    best_u, _, _, _ = cem_optimize(
        objective_waypoints, h, kin_bounds, cfg, rng, init_mean=init_rates
    )
    dp_star = unicycle_deltas(best_u[None, :], dt, speed)[0]

    def objective_tracking(a: np.ndarray) -> np.ndarray:
        dp_hat = dynamics.predict(svec, a)
        return -((dp_hat - dp_star[None, :, :]) ** 2).sum(axis=(1, 2))

    best_a, best_track, _, _ = cem_optimize(
        objective_tracking, h, bounds, cfg, rng, init_mean=init_actions
    )
    dp_exec = dynamics.predict(svec, best_a[None, :])
    rhat_exec = perception.rewards_for(latent, dp_exec)
    objective = float(evaluate_rewards(rf, rhat_exec, dp_exec, best_a[None, :], goal)[0])
    return HierarchyPlan(
        plan=PlanResult(
            actions=best_a,
            rewards=rhat_exec[0],
            deltas=dp_exec[0],
            objective=objective,
        ),
        waypoint_deltas=dp_star,
        waypoint_rates=best_u,
        tracking_residual=float(-best_track),
    )


# ---------------------------------------------------------------------------
# receding-horizon control

@dataclass
class MpcOutcome:
    success: bool
    terminal: str  # goal | collision | timeout | planner_error
    steps: int
    poses: np.ndarray  # (T+1, 3) executed trajectory including start
    actions: np.ndarray  # (T,)
    min_clearance: float
    diagnostic: str = ""


def _shift(seq: np.ndarray) -> np.ndarray:
    return np.concatenate([seq[1:], seq[-1:]])


def _body_goal(rf: RewardFunction, pose: Pose2, world: World):
    if isinstance(rf, MinTurnReward):
        return None
    if world.goal is None:
        raise ValueError(f"{type(rf).__name__} requires a world goal")
    gx, gy = world.goal
    if isinstance(rf, HeadingReward):
        return HeadingGoal(heading_to(pose, gx, gy))
    return point_in_body_frame(pose, gx, gy)


def mpc_run(
    model: IntegratedModel,
    world: World,
    variant: DynamicsVariant,
    rf: RewardFunction,
    solver_cfg: CemConfig | MppiConfig,
    max_steps: int,
    *,
    start: Pose2,
    render_cfg: RenderConfig,
    rng: np.random.Generator,
    dt: float = 0.25,
    speed: float = 1.0,
    method: str = "hint",
    kin_bounds: tuple[float, float] | None = None,
) -> MpcOutcome:
    """Plan at every simulator step, execute the first action, repeat.

    ``method`` 'hint' plans over the integrated model with CEM or MPPI;
    'hierarchy' runs the two-step baseline (CEM configs only). Planner
    failures end the episode as a failure with a diagnostic.
    """
    if method not in ("hint", "hierarchy"):
        raise ValueError(f"unknown method {method!r}; valid: hint, hierarchy")
    if method == "hierarchy" and not isinstance(solver_cfg, CemConfig):
        raise ValueError("hierarchy baseline uses the CEM solver")
    kin_bounds = kin_bounds if kin_bounds is not None else NORMAL.bounds
    bounds = variant.bounds
    state = initial_state(start, variant)
    scans: list[np.ndarray] = []
    poses = [start.as_array()]
    acts: list[float] = []
    clearance = min_clearance(start, world)
    prev_actions: np.ndarray | None = None
    prev_rates: np.ndarray | None = None
    warm = getattr(solver_cfg, "warm_start", True)
    terminal = "timeout"
    diagnostic = ""
    for _ in range(max_steps):
        scans.append(render_scan(state.pose, world, render_cfg))
        del scans[: -render_cfg.frames]
        obs = observation_from_scans(scans, render_cfg)
        svec = robot_state_vector(state)
        goal = _body_goal(rf, state.pose, world)
        try:
            if method == "hint":
                if isinstance(solver_cfg, CemConfig):
                    plan = plan_cem(
                        model, obs, svec, goal, rf, bounds, solver_cfg, rng,
                        init_mean=prev_actions,
                    )
                else:
                    plan = plan_mppi(
                        model, obs, svec, goal, rf, bounds, solver_cfg, rng,
                        nominal=prev_actions,
                    )
            else:
                hier = plan_hierarchy(
                    model.perception, model.dynamics, obs, svec, goal, rf,
                    kin_bounds, bounds, solver_cfg, rng, dt=dt, speed=speed,
                    init_rates=prev_rates, init_actions=prev_actions,
                )
                plan = hier.plan
                prev_rates = _shift(hier.waypoint_rates) if warm else None
        except PlannerError as err:
            terminal = "planner_error"
            diagnostic = str(err)
            break
        prev_actions = _shift(plan.actions) if warm else None
        state = step_dynamics(state, float(plan.actions[0]), variant, world, dt, speed)
        poses.append(state.pose.as_array())
        acts.append(float(plan.actions[0]))
        clearance = min(clearance, min_clearance(state.pose, world))
        if state.collided:
            terminal = "collision"
            break
        if goal_reached(state.pose, world):
            terminal = "goal"
            break
    return MpcOutcome(
        success=terminal == "goal",
        terminal=terminal,
        steps=len(acts),
        poses=np.array(poses),
        actions=np.array(acts),
        min_clearance=clearance,
        diagnostic=diagnostic,
    )
