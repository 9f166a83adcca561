"""Command-line surface: collect, train, evaluate, plot.

Every command reads one experiment config file and writes its resolved
config beside its outputs, so published result directories regenerate
bit-identically from the embedded config and seeds. Inputs (datasets,
checkpoints) are never mutated.

Exit codes: 0 success, 2 configuration, 3 I/O, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import data as datastore
from . import svgplot
from .config import (
    ConfigError,
    ExperimentConfig,
    build_dynamics_config,
    build_perception_config,
    build_train_config,
    dump_config,
    load_config,
    make_collect_world,
    make_eval_world,
)
from .models import (
    DynamicsModel,
    IntegratedModel,
    PerceptionModel,
    train_dynamics,
    train_perception,
)
from .nn import CheckpointError
from .planner import MinTurnReward, PlannerError, mpc_run
from .sim import World

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


def cmd_collect(args) -> int:
    cfg = load_config(args.config)
    world = make_collect_world(cfg)
    policy = datastore.make_policy(cfg.collect.policy, cfg.variant, beta=cfg.collect.beta)
    ds = datastore.collect(
        policy,
        world,
        cfg.variant,
        cfg.collect.episodes,
        cfg.collect.seed,
        max_steps=cfg.collect.max_steps,
        render_cfg=cfg.render,
        dt=cfg.dt,
        speed=cfg.speed,
        record_observations=cfg.collect.record_observations,
        min_transitions=cfg.collect.min_transitions,
    )
    out = Path(args.out)
    datastore.save(ds, out)
    dump_config(cfg, out / "resolved_config.yaml")
    for k, v in sorted(ds.manifest().items()):
        print(f"{k}={v}")
    return EXIT_OK


def _load_datasets(paths) -> list[datastore.Dataset]:
    return [datastore.load(p) for p in paths]


def cmd_train_perception(args) -> int:
    cfg = load_config(args.config)
    sets = _load_datasets(args.data)
    dims = [ds.obs_shape() for ds in sets]
    if len(set(dims)) > 1:
        per_source = ", ".join(f"{p}: {d}" for p, d in zip(args.data, dims))
        raise ConfigError(f"pooled datasets disagree on observation dims: {per_source}")
    pc = build_perception_config(cfg)
    if dims[0] != (pc.frames, pc.rows, pc.cols):
        raise ConfigError(
            f"dataset observations {dims[0]} do not match render config "
            f"({pc.frames}, {pc.rows}, {pc.cols})"
        )
    windows = [datastore.extract_perception_windows(ds, cfg.horizon) for ds in sets]
    model = PerceptionModel(pc, np.random.default_rng(np.random.SeedSequence([cfg.trainer.seed, 1])))
    result = train_perception(model, windows, build_train_config(cfg, "perception"))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    Path(str(out) + ".loss.csv").write_text(result.to_csv())
    dump_config(cfg, Path(str(out) + ".config.yaml"))
    print(f"final_train_loss={result.train_loss[-1]!r}")
    if len(result.val_loss):
        print(f"final_val_loss={result.val_loss[-1]!r}")
    return EXIT_OK


def cmd_train_dynamics(args) -> int:
    cfg = load_config(args.config)
    sets = _load_datasets(args.data)
    dims = [ds.state_dim() for ds in sets]
    dc = build_dynamics_config(cfg)
    bad = [f"{p}: state_dim={d}" for p, d in zip(args.data, dims) if d != dc.state_dim]
    if bad:
        raise ConfigError(
            f"datasets incompatible with variant {cfg.variant.label!r} "
            f"(state_dim={dc.state_dim}): " + "; ".join(bad)
        )
    windows = [datastore.extract_dynamics_windows(ds, cfg.horizon) for ds in sets]
    model = DynamicsModel(dc, np.random.default_rng(np.random.SeedSequence([cfg.trainer.seed, 2])))
    result = train_dynamics(model, windows, build_train_config(cfg, "dynamics"))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    Path(str(out) + ".loss.csv").write_text(result.to_csv())
    dump_config(cfg, Path(str(out) + ".config.yaml"))
    print(f"final_train_loss={result.train_loss[-1]!r}")
    if len(result.val_loss):
        print(f"final_val_loss={result.val_loss[-1]!r}")
    return EXIT_OK


def run_evaluation(cfg: ExperimentConfig, perception_path, dynamics_path, method: str, out_dir):
    """S starts x T trials of MPC; returns (rows, success_rate)."""
    perception = PerceptionModel.load(perception_path)
    dynamics = DynamicsModel.load(dynamics_path)
    if perception.horizon != cfg.horizon or dynamics.horizon != cfg.horizon:
        raise ConfigError(
            f"checkpoint/config horizon mismatch: perception={perception.horizon}, "
            f"dynamics={dynamics.horizon}, config={cfg.horizon}"
        )
    pc = perception.cfg
    if (pc.frames, pc.rows, pc.cols) != (cfg.render.frames, cfg.render.rows, cfg.render.cols):
        raise ConfigError(
            f"perception checkpoint observation dims ({pc.frames},{pc.rows},{pc.cols}) "
            f"do not match render config"
        )
    if dynamics.cfg.state_dim != cfg.variant.state_dim:
        raise ConfigError(
            f"dynamics checkpoint state_dim={dynamics.cfg.state_dim} does not match "
            f"variant {cfg.variant.label!r} (state_dim={cfg.variant.state_dim})"
        )
    if not isinstance(cfg.reward, MinTurnReward) and cfg.goal is None:
        raise ConfigError("reward function requires a goal in the config")
    model = IntegratedModel(perception, dynamics)
    world, starts = make_eval_world(cfg)
    out = Path(out_dir)
    (out / "trajectories").mkdir(parents=True, exist_ok=True)
    rows = []
    for si, start in enumerate(starts):
        for ti in range(cfg.evaluation.trials):
            rng = np.random.default_rng(np.random.SeedSequence([cfg.evaluation.seed, si, ti]))
            res = mpc_run(
                model, world, cfg.variant, cfg.reward, cfg.solver,
                cfg.evaluation.max_steps,
                start=start, render_cfg=cfg.render, rng=rng,
                dt=cfg.dt, speed=cfg.speed, method=method,
            )
            rows.append((si, ti, res))
            traj_lines = ["step,x,y,yaw"]
            for t, p in enumerate(res.poses):
                traj_lines.append(f"{t},{p[0]!r},{p[1]!r},{p[2]!r}")
            (out / "trajectories" / f"traj_s{si:02d}_t{ti:02d}.csv").write_text(
                "\n".join(traj_lines) + "\n"
            )
    trial_lines = ["method,start,trial,success,steps,terminal,min_clearance"]
    for si, ti, res in rows:
        trial_lines.append(
            f"{method},{si},{ti},{int(res.success)},{res.steps},{res.terminal},{res.min_clearance!r}"
        )
    (out / "trials.csv").write_text("\n".join(trial_lines) + "\n")
    successes = sum(int(r.success) for _, _, r in rows)
    rate = successes / len(rows)
    summary = [
        "method,variant,starts,trials,successes,success_rate",
        f"{method},{cfg.variant.label},{len(starts)},{cfg.evaluation.trials},{successes},{rate!r}",
    ]
    (out / "summary.csv").write_text("\n".join(summary) + "\n")
    dump_config(cfg, out / "resolved_config.yaml")
    return rows, rate


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    _, rate = run_evaluation(cfg, args.perception, args.dynamics, args.method, args.out)
    print(f"method={args.method} variant={cfg.variant.label} success_rate={rate!r}")
    return EXIT_OK


def _read_csv_rows(path: Path) -> list[dict]:
    lines = path.read_text().strip().splitlines()
    if not lines:
        return []
    header = lines[0].split(",")
    return [dict(zip(header, line.split(","))) for line in lines[1:]]


def cmd_plot(args) -> int:
    trajectories: list[svgplot.Trajectory] = []
    world: World | None = None
    for d in args.trajectories:
        root = Path(d)
        cfg_path = root / "resolved_config.yaml"
        if world is None and cfg_path.is_file():
            cfg = load_config(cfg_path)
            world = make_eval_world(cfg)[0]
        for row in _read_csv_rows(root / "trials.csv") if (root / "trials.csv").is_file() else []:
            si, ti = int(row["start"]), int(row["trial"])
            tf = root / "trajectories" / f"traj_s{si:02d}_t{ti:02d}.csv"
            if not tf.is_file():
                continue
            pts = np.array(
                [[float(r["x"]), float(r["y"])] for r in _read_csv_rows(tf)], dtype=np.float64
            )
            trajectories.append(
                svgplot.Trajectory(
                    points=pts,
                    method=row["method"],
                    collided=row["terminal"] == "collision",
                )
            )
    if not trajectories:
        raise FileNotFoundError(f"no trajectories found under {args.trajectories}")
    if world is None:
        raise FileNotFoundError("no resolved_config.yaml found to reconstruct the world")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(svgplot.render_svg(world, trajectories))
    print(f"wrote {out} ({len(trajectories)} trajectories)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="intnav", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("collect", help="run a collection policy and save the dataset")
    c.add_argument("--config", required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(fn=cmd_collect)

    tp = sub.add_parser("train-perception", help="train the perception model")
    tp.add_argument("--config", required=True)
    tp.add_argument("--data", required=True, action="append")
    tp.add_argument("--out", required=True)
    tp.set_defaults(fn=cmd_train_perception)

    td = sub.add_parser("train-dynamics", help="train the dynamics model")
    td.add_argument("--config", required=True)
    td.add_argument("--data", required=True, action="append")
    td.add_argument("--out", required=True)
    td.set_defaults(fn=cmd_train_dynamics)

    e = sub.add_parser("evaluate", help="run the MPC benchmark trials")
    e.add_argument("--config", required=True)
    e.add_argument("--perception", required=True)
    e.add_argument("--dynamics", required=True)
    e.add_argument("--method", required=True, choices=("hint", "hierarchy"))
    e.add_argument("--out", required=True)
    e.set_defaults(fn=cmd_evaluate)

    pl = sub.add_parser("plot", help="render evaluation trajectories to SVG")
    pl.add_argument("--trajectories", required=True, action="append")
    pl.add_argument("--out", required=True)
    pl.set_defaults(fn=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (datastore.DatasetIOError, CheckpointError, FileNotFoundError, OSError) as err:
        print(f"io error: {err}", file=sys.stderr)
        return EXIT_IO
    except (FloatingPointError, PlannerError) as err:
        print(f"numeric error: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
