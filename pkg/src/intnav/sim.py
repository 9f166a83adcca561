"""Deterministic 2D cluttered-room simulator.

Constant-speed car stepped by angular velocity:

    theta' = theta + dt * a
    x'     = x + dt * speed * (-sin theta')
    y'     = y + dt * speed * (cos theta')

with four dynamics variants (normal, limited steering, right turn only,
lagged control). Observations are inverse-depth raycast images standing in
for a camera. A simulator instance is single-threaded; independent
instances with independent seeds can run in parallel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import backend
from .geometry import Pose2, wrap_angle

ACTION_EPS = 1e-6  # inset used when clamping to the open action intervals

_TWO_THIRDS_PI = 2.0 * math.pi / 3.0


@dataclass(frozen=True)
class DynamicsVariant:
    """A named modification of the base car dynamics."""

    name: str
    lag_steps: int = 0

    _BOUNDS = {
        "normal": (-_TWO_THIRDS_PI, _TWO_THIRDS_PI),
        "limited_steering": (-math.pi / 3.0, math.pi / 3.0),
        "right_turn_only": (0.0, _TWO_THIRDS_PI),
        "lag": (-_TWO_THIRDS_PI, _TWO_THIRDS_PI),
    }

    def __post_init__(self):
        if self.name not in self._BOUNDS:
            raise ValueError(
                f"unknown dynamics variant {self.name!r}; valid: {sorted(self._BOUNDS)}"
            )
        if self.name == "lag":
            if self.lag_steps < 1:
                raise ValueError("lag variant requires lag_steps >= 1")
        elif self.lag_steps != 0:
            raise ValueError(f"variant {self.name!r} does not take lag_steps")

    @property
    def bounds(self) -> tuple[float, float]:
        return self._BOUNDS[self.name]

    @property
    def state_dim(self) -> int:
        """Dimension of the robot-state vector fed to the dynamics model."""
        return self.lag_steps

    @property
    def label(self) -> str:
        return f"lag{self.lag_steps}" if self.name == "lag" else self.name


NORMAL = DynamicsVariant("normal")
LIMITED_STEERING = DynamicsVariant("limited_steering")
RIGHT_TURN_ONLY = DynamicsVariant("right_turn_only")


def lag_variant(steps: int = 3) -> DynamicsVariant:
    return DynamicsVariant("lag", lag_steps=steps)


def parse_variant(spec) -> DynamicsVariant:
    """Parse 'normal', 'lag', 'lag:4', or a {name, lag_steps} mapping."""
    if isinstance(spec, DynamicsVariant):
        return spec
    if isinstance(spec, dict):
        name = spec.get("name", "")
        if name == "lag":
            return lag_variant(int(spec.get("lag_steps", 3)))
        return DynamicsVariant(str(name))
    s = str(spec).strip().lower().replace("-", "_")
    if s.startswith("lag"):
        _, _, k = s.partition(":")
        return lag_variant(int(k) if k else 3)
    return DynamicsVariant(s)


def clamp_action(a: float, variant: DynamicsVariant) -> tuple[float, bool]:
    """Clamp into the variant's open interval using the epsilon inset."""
    lo, hi = variant.bounds
    lo += ACTION_EPS
    hi -= ACTION_EPS
    if a < lo:
        return lo, True
    if a > hi:
        return hi, True
    return a, False


@dataclass(frozen=True)
class WorldConfig:
    room_width: float = 12.0
    room_length: float = 12.0
    obstacle_grid_rows: int = 3
    obstacle_grid_cols: int = 3
    obstacle_radius_range: tuple[float, float] = (0.4, 0.7)
    placement_jitter: float = 0.5
    robot_radius: float = 0.3
    goal_radius: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.room_width <= 0 or self.room_length <= 0:
            raise ValueError("room dimensions must be positive")
        rmin, rmax = self.obstacle_radius_range
        if not 0 < rmin <= rmax:
            raise ValueError(f"bad obstacle_radius_range {self.obstacle_radius_range}")


@dataclass(frozen=True)
class World:
    """A built room: config, obstacle discs (n,3 of x,y,r), optional goal."""

    cfg: WorldConfig
    obstacles: np.ndarray
    goal: tuple[float, float] | None = None

    @property
    def half_w(self) -> float:
        return self.cfg.room_width / 2.0

    @property
    def half_l(self) -> float:
        return self.cfg.room_length / 2.0

    @classmethod
    def build(
        cls,
        cfg: WorldConfig,
        goal: tuple[float, float] | None = None,
        keepout: tuple[tuple[float, float, float], ...] = (),
    ) -> "World":
        """Place obstacles on a jittered grid, dropping any that would
        intrude on a keepout disc (start cells, goal region)."""
        rng = np.random.default_rng(cfg.rng_seed)
        hw, hl = cfg.room_width / 2.0, cfg.room_length / 2.0
        keeps = list(keepout)
        if goal is not None:
            gx, gy = goal
            if abs(gx) >= hw or abs(gy) >= hl:
                raise ValueError(f"goal {goal} lies outside the room")
            keeps.append((gx, gy, cfg.goal_radius + cfg.robot_radius))
        rows, cols = cfg.obstacle_grid_rows, cfg.obstacle_grid_cols
        rmin, rmax = cfg.obstacle_radius_range
        obs: list[tuple[float, float, float]] = []
        for i in range(rows):
            for j in range(cols):
                cx = -hw + (j + 1) * cfg.room_width / (cols + 1)
                cy = -hl + (i + 1) * cfg.room_length / (rows + 1)
                placed = None
                for _ in range(20):
                    x = cx + rng.uniform(-cfg.placement_jitter, cfg.placement_jitter)
                    y = cy + rng.uniform(-cfg.placement_jitter, cfg.placement_jitter)
                    r = rng.uniform(rmin, rmax)
                    if all(math.hypot(x - kx, y - ky) > r + kr for kx, ky, kr in keeps):
                        placed = (x, y, r)
                        break
                if placed is not None:
                    obs.append(placed)
        arr = np.array(obs, dtype=np.float64).reshape(-1, 3)
        return cls(cfg=cfg, obstacles=arr, goal=goal)


def check_collision(pose: Pose2, world: World) -> bool:
    """True iff the robot disc strictly intersects an obstacle or a wall.

    Tangency (separation exactly zero) is safe.
    """
    r = world.cfg.robot_radius
    if abs(pose.x) + r > world.half_w or abs(pose.y) + r > world.half_l:
        return True
    for ox, oy, orad in world.obstacles:
        if math.hypot(pose.x - ox, pose.y - oy) < r + orad:
            return True
    return False


def min_clearance(pose: Pose2, world: World) -> float:
    """Smallest separation between the robot disc and any obstacle/wall."""
    r = world.cfg.robot_radius
    best = min(world.half_w - abs(pose.x), world.half_l - abs(pose.y)) - r
    for ox, oy, orad in world.obstacles:
        best = min(best, math.hypot(pose.x - ox, pose.y - oy) - r - orad)
    return best


@dataclass(frozen=True)
class SimState:
    """Car state between steps; collided states accept no further steps."""

    pose: Pose2
    action_history: tuple[float, ...] = ()
    collided: bool = False
    steps: int = 0
    clamp_count: int = 0


def initial_state(pose: Pose2, variant: DynamicsVariant) -> SimState:
    return SimState(pose=pose, action_history=(0.0,) * variant.lag_steps)


def robot_state_vector(state: SimState) -> np.ndarray:
    """Dynamics-model input: past executed actions, oldest first (empty for
    variants without lag)."""
    return np.array(state.action_history, dtype=np.float64)


def step_dynamics(
    state: SimState,
    a: float,
    variant: DynamicsVariant,
    world: World,
    dt: float = 0.25,
    speed: float = 1.0,
) -> SimState:
    """Advance one step; see module docstring for the closed form."""
    if state.collided:
        raise ValueError("cannot step a collided state")
    if not math.isfinite(a):
        raise ValueError(f"non-finite action {a!r}")
    a_cmd, clamped = clamp_action(a, variant)
    if variant.lag_steps > 0:
        a_eff = state.action_history[0]
        history = state.action_history[1:] + (a_cmd,)
    else:
        a_eff = a_cmd
        history = ()
    yaw = wrap_angle(state.pose.yaw + dt * a_eff)
    x = state.pose.x + dt * speed * (-math.sin(yaw))
    y = state.pose.y + dt * speed * math.cos(yaw)
    pose = Pose2(x, y, yaw)
    return SimState(
        pose=pose,
        action_history=history,
        collided=check_collision(pose, world),
        steps=state.steps + 1,
        clamp_count=state.clamp_count + (1 if clamped else 0),
    )


@dataclass(frozen=True)
class RenderConfig:
    rows: int = 16
    cols: int = 32
    frames: int = 2
    fov: float = 2.0 * math.pi / 3.0
    max_range: float = 6.0

    def ray_angles(self) -> np.ndarray:
        """Pixel-center ray offsets, leftmost column first."""
        c = np.arange(self.cols, dtype=np.float64)
        return self.fov / 2.0 - self.fov * (c + 0.5) / self.cols


def render_scan(pose: Pose2, world: World, cfg: RenderConfig) -> np.ndarray:
    """One row of inverse-depth pixels (cols,): 1 - depth / max_range."""
    depths = backend.raycast_depths(
        pose.x, pose.y, pose.yaw, cfg.ray_angles(), world.obstacles,
        world.half_w, world.half_l, cfg.max_range,
    )
    return 1.0 - depths / cfg.max_range


def observation_from_scans(scans: list[np.ndarray], cfg: RenderConfig) -> np.ndarray:
    """Stack the most recent scans into (frames, rows, cols); frame 0 is the
    oldest. Missing history is padded by repeating the oldest scan."""
    take = scans[-cfg.frames :]
    while len(take) < cfg.frames:
        take = [take[0]] + take
    return np.stack([np.tile(s, (cfg.rows, 1)) for s in take])


def render_observation(
    state: SimState,
    world: World,
    cfg: RenderConfig,
    prev_scans: list[np.ndarray] | None = None,
) -> np.ndarray:
    """Observation tensor at the current pose.

    ``prev_scans`` supplies earlier frames; without it the current scan is
    repeated (a robot with no history yet).
    """
    if state.collided:
        raise ValueError("cannot render a collided state")
    scan = render_scan(state.pose, world, cfg)
    return observation_from_scans((prev_scans or []) + [scan], cfg)


def episode_reward(state: SimState) -> float:
    """-1 on collision, 0 otherwise (goal reaching is not rewarded)."""
    return -1.0 if state.collided else 0.0


@dataclass
class EpisodeRecord:
    """Off-policy log of one episode.

    Per-step arrays share length T: the observation/state seen at step t,
    the action taken, the reward received. ``poses`` holds the pose at
    which step t started; ``final_pose`` the pose after the last step.
    """

    observations: np.ndarray  # (T, frames, rows, cols) or (T, 0, 0, 0)
    states: np.ndarray  # (T, state_dim)
    actions: np.ndarray  # (T,)
    rewards: np.ndarray  # (T,)
    poses: np.ndarray  # (T, 3)
    final_pose: np.ndarray  # (3,)
    terminal: str  # collision | goal | timeout
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        t = len(self.actions)
        for name in ("observations", "states", "rewards", "poses"):
            if len(getattr(self, name)) != t:
                raise ValueError(f"episode arrays disagree on length: {name}")
        if self.terminal == "collision" and (t == 0 or self.rewards[-1] != -1.0):
            raise ValueError("collision episodes must end with reward -1")
        if self.terminal != "collision" and t and self.rewards[-1] == -1.0:
            raise ValueError(f"terminal {self.terminal!r} inconsistent with reward -1")

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def collided(self) -> bool:
        return self.terminal == "collision"

    def all_poses(self) -> np.ndarray:
        """(T+1, 3) pose log including the final pose."""
        return np.vstack([self.poses, self.final_pose[None, :]])


def goal_reached(pose: Pose2, world: World) -> bool:
    if world.goal is None:
        return False
    gx, gy = world.goal
    return math.hypot(pose.x - gx, pose.y - gy) <= world.cfg.goal_radius


def run_episode(
    policy,
    world: World,
    variant: DynamicsVariant,
    max_steps: int,
    *,
    start: Pose2,
    render_cfg: RenderConfig,
    rng: np.random.Generator,
    dt: float = 0.25,
    speed: float = 1.0,
    record_observations: bool = True,
    policy_name: str = "policy",
) -> EpisodeRecord:
    """Run ``policy`` until collision, goal entry, or max_steps.

    ``policy(obs, state_vec, rng) -> angular velocity``; a ``reset()``
    method, when present, is called first. Non-finite actions abort with a
    diagnostic.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    if hasattr(policy, "reset"):
        policy.reset()
    state = initial_state(start, variant)
    if check_collision(start, world):
        raise ValueError(f"start pose {start} is already in collision")
    scans: list[np.ndarray] = []
    obs_log, state_log, act_log, rew_log, pose_log = [], [], [], [], []
    terminal = "timeout"
    for t in range(max_steps):
        scans.append(render_scan(state.pose, world, render_cfg))
        obs = observation_from_scans(scans, render_cfg)
        del scans[: -render_cfg.frames]
        svec = robot_state_vector(state)
        a = float(policy(obs, svec, rng))
        if not math.isfinite(a):
            raise ValueError(f"policy {policy_name!r} returned non-finite action {a!r} at step {t}")
        a_cmd, _ = clamp_action(a, variant)
        if record_observations:
            obs_log.append(obs)
        state_log.append(svec)
        act_log.append(a_cmd)
        pose_log.append(state.pose.as_array())
        state = step_dynamics(state, a_cmd, variant, world, dt, speed)
        rew_log.append(episode_reward(state))
        if state.collided:
            terminal = "collision"
            break
        if goal_reached(state.pose, world):
            terminal = "goal"
            break
    t_len = len(act_log)
    if record_observations:
        observations = np.stack(obs_log) if obs_log else np.zeros((0, 0, 0, 0))
    else:
        observations = np.zeros((t_len, 0, 0, 0), dtype=np.float64)
    return EpisodeRecord(
        observations=observations,
        states=np.array(state_log, dtype=np.float64).reshape(t_len, -1),
        actions=np.array(act_log, dtype=np.float64),
        rewards=np.array(rew_log, dtype=np.float64),
        poses=np.array(pose_log, dtype=np.float64).reshape(t_len, 3),
        final_pose=state.pose.as_array(),
        terminal=terminal,
        meta={
            "variant": variant.label,
            "lag_steps": variant.lag_steps,
            "policy": policy_name,
            "dt": dt,
            "speed": speed,
            "world_seed": world.cfg.rng_seed,
        },
    )


def sample_free_pose(
    world: World, rng: np.random.Generator, clearance: float = 0.1, max_tries: int = 200
) -> Pose2:
    """Uniform random pose with at least ``clearance`` separation."""
    hw = world.half_w - world.cfg.robot_radius - clearance
    hl = world.half_l - world.cfg.robot_radius - clearance
    for _ in range(max_tries):
        pose = Pose2(rng.uniform(-hw, hw), rng.uniform(-hl, hl), rng.uniform(-math.pi, math.pi))
        if min_clearance(pose, world) > clearance:
            return pose
    raise RuntimeError("could not sample a free pose; world too cluttered")
