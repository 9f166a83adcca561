"""Perception and dynamics predictive models and their training loops.

The perception model maps (observation, future pose-delta sequence) to
predicted per-step rewards in (-1, 0). The dynamics model maps (robot
state, future action sequence) to cumulative body-frame pose deltas. Their
composition is the integrated model used for planning; it has no extra
parameters, so evaluation is exactly perception(o, dynamics(s, a)).

Pose-delta sequences are cumulative displacements in the frame of the
planning-time pose: entry h is where the robot sits after executing h+1
actions. Internally the dynamics net predicts per-step increments that a
cumulative sum turns into that representation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .nn import AdamConfig, Tensor


def _he(rng: np.random.Generator, shape, fan_in: float) -> np.ndarray:
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


def _xavier(rng: np.random.Generator, shape, fan_in: float) -> np.ndarray:
    return rng.standard_normal(shape) * np.sqrt(1.0 / fan_in)


@dataclass(frozen=True)
class PerceptionConfig:
    horizon: int = 6
    frames: int = 2
    rows: int = 16
    cols: int = 32
    conv_channels: tuple[int, ...] = (8, 16, 16)
    conv_strides: tuple[int, ...] = (2, 2, 1)
    kernel: int = 3
    latent_dim: int = 128
    head_hidden: tuple[int, ...] = (64, 64)

    def conv_output_shape(self) -> tuple[int, int, int]:
        h, w = self.rows, self.cols
        for stride in self.conv_strides:
            h = (h - self.kernel) // stride + 1
            w = (w - self.kernel) // stride + 1
            if h <= 0 or w <= 0:
                raise ValueError(f"observation {self.rows}x{self.cols} too small for conv stack")
        return self.conv_channels[-1], h, w


class PerceptionModel:
    """Conv encoder + per-step reward head shared across the horizon."""

    def __init__(self, cfg: PerceptionConfig, rng: np.random.Generator | None = None):
        if len(cfg.conv_channels) != len(cfg.conv_strides):
            raise ValueError("conv_channels and conv_strides must have equal length")
        self.cfg = cfg
        rng = rng or np.random.default_rng(0)
        self.params: dict[str, Tensor] = {}
        cin = cfg.frames
        k = cfg.kernel
        for i, (cout, _) in enumerate(zip(cfg.conv_channels, cfg.conv_strides)):
            self._add(f"conv{i}_w", _he(rng, (cout, cin, k, k), cin * k * k))
            self._add(f"conv{i}_b", np.zeros(cout))
            cin = cout
        co, ho, wo = cfg.conv_output_shape()
        flat = co * ho * wo
        self._add("fc_w", _he(rng, (flat, cfg.latent_dim), flat))
        self._add("fc_b", np.zeros(cfg.latent_dim))
        din = cfg.latent_dim + 3
        for i, width in enumerate(cfg.head_hidden):
            self._add(f"head{i}_w", _he(rng, (din, width), din))
            self._add(f"head{i}_b", np.zeros(width))
            din = width
        self._add("out_w", rng.standard_normal((din, 1)) * 0.01)
        self._add("out_b", np.zeros(1))

    def _add(self, name: str, value: np.ndarray) -> None:
        self.params[name] = Tensor(value, requires_grad=True)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    @property
    def horizon(self) -> int:
        return self.cfg.horizon

    def encode(self, obs) -> Tensor:
        """Observation batch (B, frames, rows, cols) to latent (B, latent)."""
        x = obs if isinstance(obs, Tensor) else Tensor(obs)
        if x.data.ndim != 4 or x.data.shape[1:] != (self.cfg.frames, self.cfg.rows, self.cfg.cols):
            raise ValueError(
                f"observation shape {x.data.shape} does not match model "
                f"(frames={self.cfg.frames}, rows={self.cfg.rows}, cols={self.cfg.cols})"
            )
        for i, stride in enumerate(self.cfg.conv_strides):
            x = nn.relu(nn.conv2d(x, self.params[f"conv{i}_w"], self.params[f"conv{i}_b"], stride=stride))
        x = nn.reshape(x, (x.data.shape[0], -1))
        return nn.relu(nn.add(nn.matmul(x, self.params["fc_w"]), self.params["fc_b"]))

    def _head(self, latent: Tensor, dp) -> Tensor:
        dp_t = dp if isinstance(dp, Tensor) else Tensor(dp)
        if dp_t.data.ndim != 3 or dp_t.data.shape[2] != 3:
            raise ValueError(f"pose-delta sequence must be (B, H, 3), got {dp_t.data.shape}")
        h = dp_t.data.shape[1]
        if h != self.cfg.horizon:
            raise ValueError(f"horizon mismatch: model {self.cfg.horizon}, input {h}")
        b = dp_t.data.shape[0]
        z = nn.concat([nn.expand_steps(latent, h), dp_t], axis=2)
        z = nn.reshape(z, (b * h, self.cfg.latent_dim + 3))
        for i in range(len(self.cfg.head_hidden)):
            z = nn.relu(nn.add(nn.matmul(z, self.params[f"head{i}_w"]), self.params[f"head{i}_b"]))
        logits = nn.add(nn.matmul(z, self.params["out_w"]), self.params["out_b"])
        return nn.reshape(-nn.sigmoid(logits), (b, h))

    def forward(self, obs, dp) -> Tensor:
        """Predicted reward sequence (B, H), each value in (-1, 0)."""
        if (obs.data if isinstance(obs, Tensor) else np.asarray(obs)).shape[0] != (
            dp.data if isinstance(dp, Tensor) else np.asarray(dp)
        ).shape[0]:
            raise ValueError("observation and pose-delta batches differ in size")
        return self._head(self.encode(obs), dp)

    def loss(self, obs, dp, labels) -> Tensor:
        labels = np.asarray(labels, dtype=np.float64)
        if labels.min(initial=0.0) < -1.0 or labels.max(initial=0.0) > 0.0:
            raise ValueError("reward labels must lie in [-1, 0]")
        return nn.mse(self.forward(obs, dp), labels)

    # inference fast path: encode once, score many candidate sequences
    def encode_single(self, obs: np.ndarray) -> np.ndarray:
        with nn.no_grad():
            return self.encode(obs[None, ...]).data[0]

    def rewards_for(self, latent: np.ndarray, dps: np.ndarray) -> np.ndarray:
        with nn.no_grad():
            lat = Tensor(np.repeat(latent[None, :], dps.shape[0], axis=0))
            return self._head(lat, dps).data

    def predict_candidates(self, obs: np.ndarray, dps: np.ndarray) -> np.ndarray:
        """Rewards (N, H) for N candidate delta sequences under one observation."""
        return self.rewards_for(self.encode_single(obs), dps)

    def save(self, path) -> None:
        c = self.cfg
        header = {
            "kind": "perception",
            "horizon": c.horizon,
            "frames": c.frames,
            "rows": c.rows,
            "cols": c.cols,
            "conv_channels": ",".join(map(str, c.conv_channels)),
            "conv_strides": ",".join(map(str, c.conv_strides)),
            "kernel": c.kernel,
            "latent_dim": c.latent_dim,
            "head_hidden": ",".join(map(str, c.head_hidden)),
        }
        _save_model(path, header, {k: v.data for k, v in self.params.items()})

    @classmethod
    def load(cls, path) -> "PerceptionModel":
        header, tensors = _load_model(path, "perception")
        cfg = PerceptionConfig(
            horizon=int(header["horizon"]),
            frames=int(header["frames"]),
            rows=int(header["rows"]),
            cols=int(header["cols"]),
            conv_channels=tuple(int(x) for x in header["conv_channels"].split(",")),
            conv_strides=tuple(int(x) for x in header["conv_strides"].split(",")),
            kernel=int(header["kernel"]),
            latent_dim=int(header["latent_dim"]),
            head_hidden=tuple(int(x) for x in header["head_hidden"].split(",")),
        )
        model = cls(cfg)
        _restore(model.params, tensors, path)
        return model


@dataclass(frozen=True)
class DynamicsConfig:
    horizon: int = 6
    state_dim: int = 0
    hidden: tuple[int, ...] = (64, 64)


class DynamicsModel:
    """MLP over (state, action sequence) producing cumulative pose deltas.

    The output layer starts at zero, so an untrained model predicts zero
    deltas everywhere.
    """

    def __init__(self, cfg: DynamicsConfig, rng: np.random.Generator | None = None):
        self.cfg = cfg
        rng = rng or np.random.default_rng(0)
        self.params: dict[str, Tensor] = {}
        din = cfg.state_dim + cfg.horizon
        for i, width in enumerate(cfg.hidden):
            self._add(f"h{i}_w", _xavier(rng, (din, width), din))
            self._add(f"h{i}_b", np.zeros(width))
            din = width
        self._add("out_w", np.zeros((din, cfg.horizon * 3)))
        self._add("out_b", np.zeros(cfg.horizon * 3))

    def _add(self, name: str, value: np.ndarray) -> None:
        self.params[name] = Tensor(value, requires_grad=True)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    @property
    def horizon(self) -> int:
        return self.cfg.horizon

    def forward(self, s, a) -> Tensor:
        """Cumulative pose deltas (B, H, 3) for action sequences (B, H)."""
        s_t = s if isinstance(s, Tensor) else Tensor(s)
        a_t = a if isinstance(a, Tensor) else Tensor(a)
        if a_t.data.ndim != 2 or a_t.data.shape[1] != self.cfg.horizon:
            raise ValueError(
                f"action sequence must be (B, {self.cfg.horizon}), got {a_t.data.shape}"
            )
        if s_t.data.ndim != 2 or s_t.data.shape[1] != self.cfg.state_dim:
            raise ValueError(
                f"robot state must be (B, {self.cfg.state_dim}), got {s_t.data.shape}"
            )
        if s_t.data.shape[0] != a_t.data.shape[0]:
            raise ValueError("state and action batches differ in size")
        z = nn.concat([s_t, a_t], axis=1) if self.cfg.state_dim else a_t
        for i in range(len(self.cfg.hidden)):
            z = nn.tanh(nn.add(nn.matmul(z, self.params[f"h{i}_w"]), self.params[f"h{i}_b"]))
        inc = nn.add(nn.matmul(z, self.params["out_w"]), self.params["out_b"])
        inc = nn.reshape(inc, (a_t.data.shape[0], self.cfg.horizon, 3))
        return nn.cumulative_sum(inc, axis=1)

    def loss(self, s, a, dp_labels) -> Tensor:
        return nn.mse(self.forward(s, a), np.asarray(dp_labels, dtype=np.float64))

    def predict(self, svec: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Deltas (N, H, 3) for N candidate action sequences from one state."""
        with nn.no_grad():
            s = np.repeat(np.asarray(svec, dtype=np.float64)[None, :], actions.shape[0], axis=0)
            return self.forward(s, actions).data

    def save(self, path) -> None:
        header = {
            "kind": "dynamics",
            "horizon": self.cfg.horizon,
            "state_dim": self.cfg.state_dim,
            "hidden": ",".join(map(str, self.cfg.hidden)),
        }
        _save_model(path, header, {k: v.data for k, v in self.params.items()})

    @classmethod
    def load(cls, path) -> "DynamicsModel":
        header, tensors = _load_model(path, "dynamics")
        cfg = DynamicsConfig(
            horizon=int(header["horizon"]),
            state_dim=int(header["state_dim"]),
            hidden=tuple(int(x) for x in header["hidden"].split(",")),
        )
        model = cls(cfg)
        _restore(model.params, tensors, path)
        return model


class IntegratedModel:
    """Exact composition of a perception and a dynamics model."""

    def __init__(self, perception: PerceptionModel, dynamics: DynamicsModel):
        if perception.horizon != dynamics.horizon:
            raise ValueError(
                f"horizon mismatch: perception {perception.horizon}, dynamics {dynamics.horizon}"
            )
        self.perception = perception
        self.dynamics = dynamics

    @property
    def horizon(self) -> int:
        return self.perception.horizon

    def forward(self, obs, s, a) -> Tensor:
        """Differentiable path; gradients flow through both models."""
        return self.perception.forward(obs, self.dynamics.forward(s, a))

    def predict(self, obs: np.ndarray, svec: np.ndarray, actions: np.ndarray):
        """(rewards (N, H), deltas (N, H, 3)) for N candidate action sequences."""
        dp = self.dynamics.predict(svec, actions)
        return self.perception.predict_candidates(obs, dp), dp


# ---------------------------------------------------------------------------
# model checkpoint container: text manifest + binary tensor block

_MODEL_HEADER = b"intnav-model v1\n"


def _save_model(path, header: dict, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(_MODEL_HEADER)
        for k, v in header.items():
            f.write(f"{k}={v}\n".encode("utf-8"))
        f.write(b"\n")
        nn.write_tensors(f, tensors)


def _load_model(path, expect_kind: str):
    with open(path, "rb") as f:
        first = f.readline()
        if first != _MODEL_HEADER:
            raise nn.CheckpointError(f"{path}: not a model checkpoint (got {first!r})")
        header: dict[str, str] = {}
        while True:
            line = f.readline().decode("utf-8")
            if line in ("\n", ""):
                break
            k, _, v = line.rstrip("\n").partition("=")
            header[k] = v
        if header.get("kind") != expect_kind:
            raise nn.CheckpointError(
                f"{path}: checkpoint kind {header.get('kind')!r}, expected {expect_kind!r}"
            )
        return header, nn.read_tensors(f)


def _restore(params: dict[str, Tensor], tensors: dict[str, np.ndarray], path) -> None:
    missing = set(params) - set(tensors)
    extra = set(tensors) - set(params)
    if missing or extra:
        raise nn.CheckpointError(f"{path}: tensor names mismatch (missing {missing}, extra {extra})")
    for k, p in params.items():
        if tensors[k].shape != p.data.shape:
            raise nn.CheckpointError(
                f"{path}: tensor {k} shape {tensors[k].shape} != expected {p.data.shape}"
            )
        p.data = tensors[k]


def load_model(path):
    """Load either model kind by inspecting the checkpoint manifest."""
    with open(path, "rb") as f:
        f.readline()
        for raw in f:
            line = raw.decode("utf-8", errors="replace")
            if line.startswith("kind="):
                kind = line.strip().split("=", 1)[1]
                break
        else:
            raise nn.CheckpointError(f"{path}: no kind in manifest")
    if kind == "perception":
        return PerceptionModel.load(path)
    if kind == "dynamics":
        return DynamicsModel.load(path)
    raise nn.CheckpointError(f"{path}: unknown model kind {kind!r}")


# ---------------------------------------------------------------------------
# training

@dataclass
class TrainConfig:
    batch_size: int = 32
    steps: int = 3000
    adam: AdamConfig = field(default_factory=AdamConfig)
    collision_rebalance: float | None = None  # 0.5 means 50:50 collision windows
    source_ratios: tuple[float, ...] | None = None
    horizon: int = 6
    val_fraction: float = 0.1
    val_every: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.collision_rebalance is not None and not 0.0 < self.collision_rebalance < 1.0:
            raise ValueError("collision_rebalance must be in (0, 1)")
        if self.source_ratios is not None:
            if abs(sum(self.source_ratios) - 1.0) > 1e-9:
                raise ValueError(f"source_ratios must sum to 1, got {self.source_ratios}")


@dataclass
class TrainResult:
    steps: np.ndarray
    train_loss: np.ndarray  # per-window mean, one entry per step
    val_steps: np.ndarray
    val_loss: np.ndarray

    def to_csv(self) -> str:
        val = dict(zip(self.val_steps.tolist(), self.val_loss.tolist()))
        lines = ["step,train_loss,val_loss"]
        for s, tl in zip(self.steps.tolist(), self.train_loss.tolist()):
            v = val.get(s)
            lines.append(f"{s},{tl!r},{v!r}" if v is not None else f"{s},{tl!r},")
        return "\n".join(lines) + "\n"


def _apportion(total: int, fractions) -> list[int]:
    raw = [f * total for f in fractions]
    counts = [int(x) for x in raw]
    order = np.argsort([-(x - int(x)) for x in raw], kind="stable")
    for i in range(total - sum(counts)):
        counts[order[i % len(counts)]] += 1
    return counts


def _split_indices(windows, frac: float, rng: np.random.Generator):
    """Split window indices into train/val by episode, not by window."""
    eids = np.unique(windows.episode_id)
    if frac <= 0.0 or len(eids) < 2:
        return np.arange(len(windows)), np.empty(0, dtype=np.int64)
    perm = rng.permutation(eids)
    n_val = max(1, int(round(frac * len(eids))))
    val_set = set(perm[:n_val].tolist())
    mask = np.array([e in val_set for e in windows.episode_id])
    return np.nonzero(~mask)[0], np.nonzero(mask)[0]


class _Sampler:
    """Deterministic batch sampler with source and collision rebalancing."""

    def __init__(self, window_sets, train_idx, cfg: TrainConfig):
        self.sets = window_sets
        self.idx = train_idx
        self.cfg = cfg
        if cfg.source_ratios is not None and len(cfg.source_ratios) != len(window_sets):
            raise ValueError(
                f"{len(cfg.source_ratios)} source ratios for {len(window_sets)} datasets"
            )
        sizes = np.array([len(ix) for ix in train_idx], dtype=np.float64)
        if np.any(sizes == 0):
            raise ValueError("a pooled dataset has no training windows")
        self.fractions = (
            list(cfg.source_ratios) if cfg.source_ratios is not None else (sizes / sizes.sum()).tolist()
        )
        self.col_pools = []
        for ws, ix in zip(window_sets, train_idx):
            if cfg.collision_rebalance is not None and hasattr(ws, "has_collision"):
                m = ws.has_collision[ix]
                self.col_pools.append((ix[m], ix[~m]))
            else:
                self.col_pools.append(None)

    def draw(self, rng: np.random.Generator) -> list[np.ndarray]:
        counts = _apportion(self.cfg.batch_size, self.fractions)
        out = []
        for ix, pools, count in zip(self.idx, self.col_pools, counts):
            if count == 0:
                out.append(np.empty(0, dtype=np.int64))
                continue
            if pools is None or len(pools[0]) == 0 or len(pools[1]) == 0:
                out.append(ix[rng.integers(len(ix), size=count)])
            else:
                col, non = pools
                n_col = int(round(self.cfg.collision_rebalance * count))
                pick = np.concatenate(
                    [
                        col[rng.integers(len(col), size=n_col)],
                        non[rng.integers(len(non), size=count - n_col)],
                    ]
                )
                out.append(pick)
        return out


def _run_training(model, window_sets, cfg: TrainConfig, batch_loss, val_loss) -> TrainResult:
    if not window_sets:
        raise ValueError("no datasets given")
    for ws in window_sets:
        if ws.dp.shape[1] != cfg.horizon:
            raise ValueError(f"window horizon {ws.dp.shape[1]} != config horizon {cfg.horizon}")
    if model.horizon != cfg.horizon:
        raise ValueError(f"model horizon {model.horizon} != config horizon {cfg.horizon}")
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 77]))
    splits = [_split_indices(ws, cfg.val_fraction, rng) for ws in window_sets]
    sampler = _Sampler(window_sets, [tr for tr, _ in splits], cfg)
    opt = nn.Adam(model.parameters(), cfg.adam)
    steps, tl, vs, vl = [], [], [], []

    def validation() -> float | None:
        num = 0
        acc = 0.0
        for ws, (_, va) in zip(window_sets, splits):
            if len(va) == 0:
                continue
            take = va[: min(len(va), 512)]
            acc += float(val_loss(ws, take).data)
            num += len(take)
        return acc / num if num else None

    for step in range(1, cfg.steps + 1):
        picks = sampler.draw(rng)
        opt.zero_grad()
        losses = []
        for ws, pick in zip(window_sets, picks):
            if len(pick) == 0:
                continue
            losses.append(batch_loss(ws, pick))
        loss = losses[0]
        for extra in losses[1:]:
            loss = nn.add(loss, extra)
        nn.backward(loss)
        opt.step()
        total = float(loss.data) / cfg.batch_size
        steps.append(step)
        tl.append(total)
        if step % cfg.val_every == 0 or step == cfg.steps:
            v = validation()
            if v is not None:
                vs.append(step)
                vl.append(v)
    return TrainResult(
        steps=np.array(steps),
        train_loss=np.array(tl),
        val_steps=np.array(vs),
        val_loss=np.array(vl),
    )


def train_perception(model: PerceptionModel, window_sets, cfg: TrainConfig) -> TrainResult:
    """Minibatch descent on the summed squared reward-sequence error."""

    def batch_loss(ws, pick):
        obs, dp, r = ws.batch(pick)
        return model.loss(obs, dp, r)

    def val_loss(ws, pick):
        obs, dp, r = ws.batch(pick)
        with nn.no_grad():
            return model.loss(obs, dp, r)

    return _run_training(model, window_sets, cfg, batch_loss, val_loss)


def train_dynamics(model: DynamicsModel, window_sets, cfg: TrainConfig) -> TrainResult:
    """Minibatch descent on the summed squared pose-delta-sequence error."""
    for ws in window_sets:
        if ws.s.shape[1] != model.cfg.state_dim:
            raise ValueError(
                f"dataset state dim {ws.s.shape[1]} != model state dim {model.cfg.state_dim}"
            )

    def batch_loss(ws, pick):
        s, a, dp = ws.batch(pick)
        return model.loss(s, a, dp)

    def val_loss(ws, pick):
        s, a, dp = ws.batch(pick)
        with nn.no_grad():
            return model.loss(s, a, dp)

    return _run_training(model, window_sets, cfg, batch_loss, val_loss)
