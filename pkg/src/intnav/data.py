"""Episode datasets: collection policies, persistence, window extraction.

On disk a dataset is a directory holding a plain-text manifest plus one
framed binary file per episode (magic, version, dims header, float64
little-endian payload, trailing CRC32). Datasets are immutable after
collection; concurrent readers are safe.
"""

from __future__ import annotations

import io
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import deltas_from_poses
from .sim import (
    DynamicsVariant,
    EpisodeRecord,
    RenderConfig,
    World,
    clamp_action,
    run_episode,
    sample_free_pose,
)


class DatasetIOError(IOError):
    """Base class for dataset persistence failures."""


class DatasetFormatError(DatasetIOError):
    pass


class DatasetVersionError(DatasetIOError):
    pass


class DatasetTruncatedError(DatasetIOError):
    pass


class DatasetChecksumError(DatasetIOError):
    pass


_EP_MAGIC = b"INAVEPIS"
_EP_VERSION = 1
_TERMINALS = ("collision", "goal", "timeout")


# ---------------------------------------------------------------------------
# collection policies

class RandomWalkPolicy:
    """Uniform action in the variant's bounds at every step."""

    name = "random_walk"

    def __init__(self, variant: DynamicsVariant):
        lo, hi = variant.bounds
        self.lo, _ = clamp_action(lo, variant)
        self.hi, _ = clamp_action(hi, variant)

    def reset(self):
        pass

    def __call__(self, obs, svec, rng):
        return rng.uniform(self.lo, self.hi)


class CorrelatedRandomWalkPolicy:
    """AR(1)-smoothed random walk: a_t = beta * a_{t-1} + (1-beta) * u."""

    name = "correlated_random_walk"

    def __init__(self, variant: DynamicsVariant, beta: float = 0.8):
        if not 0.0 <= beta < 1.0:
            raise ValueError(f"beta must be in [0, 1), got {beta}")
        lo, hi = variant.bounds
        self.lo, _ = clamp_action(lo, variant)
        self.hi, _ = clamp_action(hi, variant)
        self.beta = beta
        self._prev: float | None = None

    def reset(self):
        self._prev = None

    def __call__(self, obs, svec, rng):
        u = rng.uniform(self.lo, self.hi)
        a = u if self._prev is None else self.beta * self._prev + (1.0 - self.beta) * u
        a = min(self.hi, max(self.lo, a))
        self._prev = a
        return a


class PlannerPolicy:
    """Wraps a planner callable for on-policy collection."""

    name = "on_policy"

    def __init__(self, plan_fn, reset_fn=None):
        self._plan = plan_fn
        self._reset = reset_fn

    def reset(self):
        if self._reset is not None:
            self._reset()

    def __call__(self, obs, svec, rng):
        return self._plan(obs, svec, rng)


def make_policy(kind: str, variant: DynamicsVariant, beta: float = 0.8, planner=None):
    kind = kind.strip().lower()
    if kind == "random_walk":
        return RandomWalkPolicy(variant)
    if kind == "correlated_random_walk":
        return CorrelatedRandomWalkPolicy(variant, beta)
    if kind == "on_policy":
        if planner is None:
            raise ValueError("on_policy collection needs a planner")
        return PlannerPolicy(planner)
    raise ValueError(f"unknown collection policy {kind!r}")


# ---------------------------------------------------------------------------
# dataset container

@dataclass
class Dataset:
    """Ordered collection of EpisodeRecord from one (world, variant, policy)."""

    episodes: list[EpisodeRecord]
    meta: dict

    def __len__(self) -> int:
        return len(self.episodes)

    @property
    def total_steps(self) -> int:
        return sum(len(ep) for ep in self.episodes)

    @property
    def collision_count(self) -> int:
        return sum(1 for ep in self.episodes if ep.collided)

    def obs_shape(self) -> tuple[int, int, int]:
        return tuple(self.episodes[0].observations.shape[1:]) if self.episodes else (0, 0, 0)

    def state_dim(self) -> int:
        return self.episodes[0].states.shape[1] if self.episodes else 0

    def manifest(self) -> dict:
        frames, rows, cols = self.obs_shape()
        m = {
            "episodes": len(self.episodes),
            "steps": self.total_steps,
            "collisions": self.collision_count,
            "frames": frames,
            "rows": rows,
            "cols": cols,
            "state_dim": self.state_dim(),
            "action_dim": 1,
        }
        m.update(self.meta)
        return m


def collect(
    policy,
    world: World,
    variant: DynamicsVariant,
    episodes: int,
    seed: int,
    *,
    max_steps: int = 100,
    render_cfg: RenderConfig | None = None,
    dt: float = 0.25,
    speed: float = 1.0,
    record_observations: bool = True,
    min_transitions: int | None = None,
) -> Dataset:
    """Run the policy for ``episodes`` episodes (and beyond, if needed to
    reach ``min_transitions`` total steps). Start poses are sampled
    uniformly from free space; everything is derived from ``seed``."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    render_cfg = render_cfg or RenderConfig()
    eps: list[EpisodeRecord] = []
    total = 0
    i = 0
    while i < episodes or (min_transitions is not None and total < min_transitions):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        start = sample_free_pose(world, rng)
        ep = run_episode(
            policy,
            world,
            variant,
            max_steps,
            start=start,
            render_cfg=render_cfg,
            rng=rng,
            dt=dt,
            speed=speed,
            record_observations=record_observations,
            policy_name=getattr(policy, "name", "policy"),
        )
        eps.append(ep)
        total += len(ep)
        i += 1
    return Dataset(
        episodes=eps,
        meta={
            "variant": variant.label,
            "lag_steps": variant.lag_steps,
            "policy": getattr(policy, "name", "policy"),
            "dt": dt,
            "speed": speed,
            "seed": seed,
            "world_seed": world.cfg.rng_seed,
        },
    )


# ---------------------------------------------------------------------------
# window extraction

@dataclass
class PerceptionWindows:
    """Training windows (o_t, cumulative dp labels, reward labels).

    Observations live in a shared bank indexed per window, so overlapping
    windows do not duplicate image memory. No actions are stored: pooling
    perception data across platforms never needs matching action spaces.
    """

    obs_bank: np.ndarray  # (S, frames, rows, cols)
    obs_index: np.ndarray  # (N,)
    dp: np.ndarray  # (N, H, 3)
    r: np.ndarray  # (N, H)
    has_collision: np.ndarray  # (N,) bool
    episode_id: np.ndarray  # (N,)

    def __len__(self) -> int:
        return len(self.obs_index)

    def batch(self, idx: np.ndarray):
        return self.obs_bank[self.obs_index[idx]], self.dp[idx], self.r[idx]


@dataclass
class DynamicsWindows:
    """Training windows (s_t, action sequence, cumulative dp labels)."""

    s: np.ndarray  # (N, state_dim)
    a: np.ndarray  # (N, H)
    dp: np.ndarray  # (N, H, 3)
    episode_id: np.ndarray  # (N,)

    def __len__(self) -> int:
        return len(self.a)

    def batch(self, idx: np.ndarray):
        return self.s[idx], self.a[idx], self.dp[idx]


def extract_perception_windows(ds: Dataset, horizon: int) -> PerceptionWindows:
    """One window per step. Windows that cross the episode end hold the last
    pose (absorbing termination); reward labels are -1 from the collision
    step onward and 0 before it."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    frames = ds.obs_shape()[0]
    if frames == 0:
        raise ValueError("dataset has no recorded observations")
    banks, obs_index, dps, rs, cols, eids = [], [], [], [], [], []
    offset = 0
    for eid, ep in enumerate(ds.episodes):
        t_len = len(ep)
        banks.append(ep.observations)
        poses = ep.all_poses()
        c = t_len - 1 if ep.collided else None
        for t in range(t_len):
            obs_index.append(offset + t)
            dps.append(deltas_from_poses(poses, t, horizon))
            r = np.zeros(horizon)
            if c is not None and c - t < horizon:
                r[max(0, c - t) :] = -1.0
            rs.append(r)
            cols.append(c is not None and c - t < horizon)
            eids.append(eid)
        offset += t_len
    if not obs_index:
        raise ValueError("no windows could be extracted")
    return PerceptionWindows(
        obs_bank=np.concatenate(banks, axis=0),
        obs_index=np.array(obs_index, dtype=np.int64),
        dp=np.stack(dps),
        r=np.stack(rs),
        has_collision=np.array(cols, dtype=bool),
        episode_id=np.array(eids, dtype=np.int64),
    )


def extract_dynamics_windows(ds: Dataset, horizon: int) -> DynamicsWindows:
    """Full windows only (t + H <= T): actions past the episode end do not
    exist, and padding them would teach the model wrong physics."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    ss, aa, dps, eids = [], [], [], []
    for eid, ep in enumerate(ds.episodes):
        t_len = len(ep)
        poses = ep.all_poses()
        for t in range(t_len - horizon + 1):
            ss.append(ep.states[t])
            aa.append(ep.actions[t : t + horizon])
            dps.append(deltas_from_poses(poses, t, horizon))
            eids.append(eid)
    if not aa:
        raise ValueError(f"no dynamics windows: episodes shorter than horizon {horizon}")
    return DynamicsWindows(
        s=np.stack(ss),
        a=np.stack(aa),
        dp=np.stack(dps),
        episode_id=np.array(eids, dtype=np.int64),
    )


# ---------------------------------------------------------------------------
# persistence

def _meta_bytes(meta: dict) -> bytes:
    lines = [f"{k}={meta[k]}" for k in sorted(meta)]
    return ("\n".join(lines) + "\n").encode("utf-8") if meta else b""


def _parse_meta(raw: bytes) -> dict:
    out: dict = {}
    for line in raw.decode("utf-8").splitlines():
        if not line.strip():
            continue
        k, _, v = line.partition("=")
        out[k] = v
    return out


def _episode_bytes(ep: EpisodeRecord) -> bytes:
    t_len = len(ep)
    frames, rows, cols = ep.observations.shape[1:] if ep.observations.ndim == 4 else (0, 0, 0)
    body = io.BytesIO()
    body.write(
        struct.pack(
            "<6IB",
            t_len,
            frames,
            rows,
            cols,
            ep.states.shape[1],
            0,
            _TERMINALS.index(ep.terminal),
        )
    )
    mb = _meta_bytes(ep.meta)
    body.write(struct.pack("<I", len(mb)))
    body.write(mb)
    for arr in (ep.poses, ep.final_pose, ep.states, ep.actions, ep.rewards, ep.observations):
        body.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    payload = body.getvalue()
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    return _EP_MAGIC + struct.pack("<I", _EP_VERSION) + payload + struct.pack("<I", crc)


def _episode_from_bytes(raw: bytes, path: str) -> EpisodeRecord:
    if len(raw) < len(_EP_MAGIC) + 4:
        raise DatasetTruncatedError(f"{path}: file shorter than header")
    if raw[: len(_EP_MAGIC)] != _EP_MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {raw[:8]!r}")
    (version,) = struct.unpack_from("<I", raw, len(_EP_MAGIC))
    if version != _EP_VERSION:
        raise DatasetVersionError(f"{path}: unsupported episode version {version}")
    if len(raw) < len(_EP_MAGIC) + 8:
        raise DatasetTruncatedError(f"{path}: missing checksum")
    payload = raw[len(_EP_MAGIC) + 4 : -4]
    (crc_stored,) = struct.unpack("<I", raw[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc_stored:
        raise DatasetChecksumError(f"{path}: checksum mismatch")
    f = io.BytesIO(payload)

    def take(n: int) -> bytes:
        b = f.read(n)
        if len(b) != n:
            raise DatasetTruncatedError(f"{path}: truncated payload")
        return b

    t_len, frames, rows, cols, state_dim, _, term_code = struct.unpack("<6IB", take(25))
    (mlen,) = struct.unpack("<I", take(4))
    meta = _parse_meta(take(mlen))

    def arr(shape) -> np.ndarray:
        n = int(np.prod(shape))
        return np.frombuffer(take(8 * n), dtype="<f8").reshape(shape).copy()

    poses = arr((t_len, 3))
    final_pose = arr((3,))
    states = arr((t_len, state_dim))
    actions = arr((t_len,))
    rewards = arr((t_len,))
    observations = arr((t_len, frames, rows, cols))
    return EpisodeRecord(
        observations=observations,
        states=states,
        actions=actions,
        rewards=rewards,
        poses=poses,
        final_pose=final_pose,
        terminal=_TERMINALS[term_code],
        meta=meta,
    )


def save(ds: Dataset, path) -> None:
    """Write the dataset directory (manifest + per-episode binaries)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    lines = [f"{k}={v}" for k, v in sorted(ds.manifest().items())]
    (root / "manifest.txt").write_text("\n".join(lines) + "\n")
    for i, ep in enumerate(ds.episodes):
        (root / f"ep_{i:05d}.bin").write_bytes(_episode_bytes(ep))


def load(path) -> Dataset:
    root = Path(path)
    mf = root / "manifest.txt"
    if not mf.is_file():
        raise DatasetFormatError(f"{root}: missing manifest.txt")
    manifest = _parse_meta(mf.read_bytes())
    files = sorted(root.glob("ep_*.bin"))
    episodes = [_episode_from_bytes(p.read_bytes(), str(p)) for p in files]
    declared = int(manifest.get("episodes", len(episodes)))
    if declared != len(episodes):
        raise DatasetFormatError(
            f"{root}: manifest declares {declared} episodes, found {len(episodes)}"
        )
    meta_keys = ("variant", "lag_steps", "policy", "dt", "speed", "seed", "world_seed")
    meta = {k: manifest[k] for k in meta_keys if k in manifest}
    for k in ("lag_steps", "seed", "world_seed"):
        if k in meta:
            meta[k] = int(meta[k])
    for k in ("dt", "speed"):
        if k in meta:
            meta[k] = float(meta[k])
    return Dataset(episodes=episodes, meta=meta)


def episode_to_csv(ep: EpisodeRecord) -> str:
    """Flat CSV view of an episode for external inspection."""
    lines = ["step,x,y,yaw,action,reward"]
    for t in range(len(ep)):
        x, y, yaw = ep.poses[t]
        lines.append(f"{t},{x!r},{y!r},{yaw!r},{ep.actions[t]!r},{ep.rewards[t]!r}")
    return "\n".join(lines) + "\n"
