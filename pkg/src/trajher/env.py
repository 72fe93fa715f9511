"""Quasi-static cube-carry world: three point effectors, one axis-aligned cube
and a three-waypoint goal trajectory.

Actions are 9-d effector velocity commands in [-1, 1] (three effectors times
x, y, z), executed at 20 Hz. A cube is held when two effectors sit close to
its faces on roughly opposite sides; a held cube follows the holders'
centroid, an unheld cube is pushed horizontally and falls to the floor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, InputError, StateError
from .numerics import SeededRng

N_EFFECTORS = 3
ACTION_DIM = 9
OBS_DIM = 36
GOAL_DIM = 3
SUCCESS_THRESHOLD = 0.02
REWARD_MODES = ("full", "push_only", "sparse")

# observation layout
OBS_EFFECTOR_POS = slice(0, 9)
OBS_EFFECTOR_VEL = slice(9, 18)
OBS_PREV_ACTION = slice(18, 27)
OBS_CUBE_POS = slice(27, 30)
OBS_CUBE_DELTA = slice(30, 33)
OBS_GOAL = slice(33, 36)


@dataclass(frozen=True)
class EnvParams:
    arena_radius: float = 0.19
    cube_half_extent: float = 0.0325
    dt: float = 0.05
    v_max: float = 0.4
    grasp_tolerance: float = 0.015
    push_gain: float = 1.0
    gravity_drop: float = 1.0
    lift_speed_cap: float = 0.2
    max_height: float = 0.27
    home_radius: float = 0.12
    home_height: float = 0.08
    goal_max_height: float = 0.15
    floor_goal_prob: float = 0.25
    episode_length: int = 90
    segment_length: int = 30

    def validate(self) -> None:
        for name, value in vars(self).items():
            if name == "floor_goal_prob":
                if not 0.0 <= value <= 1.0:
                    raise ConfigurationError(f"env.{name} must lie in [0, 1], got {value}")
            elif not value > 0:
                raise ConfigurationError(f"env.{name} must be positive, got {value}")
        if not math.isclose(self.dt, 0.05):
            raise ConfigurationError(f"env.dt is fixed at 0.05 s (20 Hz), got {self.dt}")
        if self.episode_length % self.segment_length:
            raise ConfigurationError("env.episode_length must be a multiple of env.segment_length")
        if self.cube_half_extent >= self.arena_radius:
            raise ConfigurationError("cube does not fit in the arena")
        if not self.cube_half_extent <= self.goal_max_height <= self.max_height:
            raise ConfigurationError("env.goal_max_height must lie in [cube_half_extent, max_height]")

    @property
    def n_segments(self) -> int:
        return self.episode_length // self.segment_length


@dataclass(frozen=True)
class DRConfig:
    """Per-episode parameter multipliers and injected noise."""

    enabled: bool = False
    push_gain: tuple[float, float] = (0.8, 1.2)
    grasp_tolerance: tuple[float, float] = (0.8, 1.2)
    lift_speed_cap: tuple[float, float] = (0.8, 1.2)
    cube_half_extent: tuple[float, float] = (0.9, 1.1)
    action_noise: float = 0.05
    obs_noise: float = 0.005

    RANGE_FIELDS = ("push_gain", "grasp_tolerance", "lift_speed_cap", "cube_half_extent")

    def validate(self) -> None:
        for name in self.RANGE_FIELDS:
            lo, hi = getattr(self, name)
            if not (0 < lo <= 1.0 <= hi):
                raise ConfigurationError(f"dr.{name} range {lo}..{hi} must be positive and contain 1.0")
        if self.action_noise < 0 or self.obs_noise < 0:
            raise ConfigurationError("dr noise levels must be >= 0")


@dataclass
class GoalTrajectory:
    goals: np.ndarray  # (n_segments, 3)
    segment_length: int = 30

    def index(self, step: int) -> int:
        return min(step // self.segment_length, len(self.goals) - 1)

    def active(self, step: int) -> np.ndarray:
        return self.goals[self.index(step)]


@dataclass
class EnvState:
    effector_positions: np.ndarray  # (3, 3)
    effector_velocities: np.ndarray  # (3, 3)
    prev_action: np.ndarray  # (9,)
    cube_position: np.ndarray
    prev_cube_position: np.ndarray
    held: bool
    step_index: int
    trajectory: GoalTrajectory
    params: EnvParams
    scales: dict = field(default_factory=dict)

    def copy(self) -> "EnvState":
        return EnvState(
            self.effector_positions.copy(), self.effector_velocities.copy(),
            self.prev_action.copy(), self.cube_position.copy(),
            self.prev_cube_position.copy(), self.held, self.step_index,
            GoalTrajectory(self.trajectory.goals.copy(), self.trajectory.segment_length),
            self.params, dict(self.scales),
        )


def compute_reward(achieved, goal, mode: str = "full", a: float = 20.0,
                   threshold: float = SUCCESS_THRESHOLD):
    """Reward of reaching ``achieved`` when aiming for ``goal``.

    ``full``: sparse x-y term (0 within ``threshold``, else -1) plus a dense
    height term, -a*|dz| below the goal and -(a/2)*|dz| above it.
    ``push_only``: the x-y term alone. ``sparse``: 0 within ``threshold`` in
    3-D, else -1. Works elementwise over leading batch dimensions.
    """
    achieved = np.asarray(achieved, dtype=np.float64)
    goal = np.asarray(goal, dtype=np.float64)
    if mode == "sparse":
        dist = np.linalg.norm(achieved - goal, axis=-1)
        return -(dist > threshold).astype(np.float64)
    if mode not in REWARD_MODES:
        raise ConfigurationError(f"unknown reward mode {mode!r}")
    d_xy = np.linalg.norm(achieved[..., :2] - goal[..., :2], axis=-1)
    r_xy = -(d_xy > threshold).astype(np.float64)
    if mode == "push_only":
        return r_xy
    dz = achieved[..., 2] - goal[..., 2]
    r_z = np.where(dz < 0.0, a * dz, -0.5 * a * dz)
    return r_xy + r_z


def is_success(achieved, goal, threshold: float = SUCCESS_THRESHOLD):
    """True when the cube is within ``threshold`` of the goal in 3-D."""
    d = np.linalg.norm(np.asarray(achieved, float) - np.asarray(goal, float), axis=-1)
    return d <= threshold


def apply_noise(vec, sigma: float, rng: SeededRng, clip: float | None = None) -> np.ndarray:
    """Add iid Gaussian noise; ``clip`` bounds the result to [-clip, clip].

    ``sigma == 0`` returns a copy without consuming random draws.
    """
    if sigma < 0:
        raise ConfigurationError(f"noise sigma must be >= 0, got {sigma}")
    out = np.array(vec, dtype=np.float64)
    if sigma > 0:
        out = out + rng.normal(0.0, sigma, size=out.shape)
    if clip is not None:
        np.clip(out, -clip, clip, out=out)
    return out


def sample_disk(rng: SeededRng, radius: float) -> np.ndarray:
    r = radius * math.sqrt(rng.random())
    theta = 2.0 * math.pi * rng.random()
    return np.array([r * math.cos(theta), r * math.sin(theta)])


def sample_trajectory(params: EnvParams, rng: SeededRng) -> GoalTrajectory:
    h = params.cube_half_extent
    goals = np.empty((params.n_segments, 3))
    for i in range(params.n_segments):
        goals[i, :2] = sample_disk(rng, params.arena_radius - h)
        on_floor = rng.random() < params.floor_goal_prob
        z = rng.uniform(h, params.goal_max_height)
        goals[i, 2] = h if on_floor else z
    return GoalTrajectory(goals, params.segment_length)


def home_positions(params: EnvParams) -> np.ndarray:
    angles = np.deg2rad([0.0, 120.0, 240.0])
    return np.stack([
        params.home_radius * np.cos(angles),
        params.home_radius * np.sin(angles),
        np.full(3, params.home_height),
    ], axis=1)


def surface_distance(point: np.ndarray, center: np.ndarray, half: float) -> float:
    """Unsigned distance from ``point`` to the surface of an axis-aligned cube."""
    d = np.abs(point - center) - half
    outside = np.maximum(d, 0.0)
    if outside.any():
        return float(math.sqrt(outside @ outside))
    return float(-d.max())


def grasping_effectors(positions: np.ndarray, cube: np.ndarray, half: float,
                       tolerance: float) -> list[int]:
    """Indices of effectors forming at least one valid pinch pair.

    A pair is valid when both are within ``tolerance`` of the cube surface
    and their horizontal offsets from the cube centre are more than 120
    degrees apart.
    """
    near = [i for i in range(len(positions))
            if surface_distance(positions[i], cube, half) <= tolerance]
    holders: set[int] = set()
    for a_i, i in enumerate(near):
        u = positions[i, :2] - cube[:2]
        nu = math.hypot(u[0], u[1])
        if nu == 0.0:
            continue
        for j in near[a_i + 1:]:
            v = positions[j, :2] - cube[:2]
            nv = math.hypot(v[0], v[1])
            if nv == 0.0:
                continue
            if (u @ v) / (nu * nv) < -0.5:
                holders.update((i, j))
    return sorted(holders)


def _clamp_radius(xy: np.ndarray, radius: float) -> None:
    r = math.hypot(xy[0], xy[1])
    if r > radius:
        xy *= radius / r


class CubeCarryEnv:
    """Single environment instance; not thread safe.

    ``dr`` controls domain randomisation; toggle ``dr_enabled`` to switch it
    on or off between episodes without rebuilding the env.
    """

    obs_dim = OBS_DIM
    goal_dim = GOAL_DIM
    action_dim = ACTION_DIM

    def __init__(self, params: EnvParams | None = None, dr: DRConfig | None = None,
                 rng: SeededRng | None = None):
        self.base_params = params or EnvParams()
        self.base_params.validate()
        self.dr = dr or DRConfig()
        self.dr.validate()
        self.dr_enabled = self.dr.enabled
        self.rng = rng if rng is not None else SeededRng(0)
        self.state: EnvState | None = None

    # -- episode lifecycle -------------------------------------------------

    def _episode_params(self) -> tuple[EnvParams, dict]:
        scales = {name: 1.0 for name in DRConfig.RANGE_FIELDS}
        if not self.dr_enabled:
            return self.base_params, scales
        for name in DRConfig.RANGE_FIELDS:
            lo, hi = getattr(self.dr, name)
            if hi > lo:
                scales[name] = float(self.rng.uniform(lo, hi))
        base = self.base_params
        params = replace(base, **{name: getattr(base, name) * s for name, s in scales.items()})
        return params, scales

    def reset(self, trajectory: GoalTrajectory | None = None,
              cube_position=None) -> np.ndarray:
        params, scales = self._episode_params()
        h = params.cube_half_extent
        if cube_position is None:
            cube = np.append(sample_disk(self.rng, params.arena_radius - h), h)
        else:
            cube = np.array(cube_position, dtype=np.float64)
        if trajectory is None:
            trajectory = sample_trajectory(params, self.rng)
        self.state = EnvState(
            effector_positions=home_positions(params),
            effector_velocities=np.zeros((N_EFFECTORS, 3)),
            prev_action=np.zeros(ACTION_DIM),
            cube_position=cube,
            prev_cube_position=cube.copy(),
            held=False,
            step_index=0,
            trajectory=trajectory,
            params=params,
            scales=scales,
        )
        return self.observe()

    @property
    def done(self) -> bool:
        return self.state is not None and self.state.step_index >= self.state.params.episode_length

    def active_goal(self) -> np.ndarray:
        return self.state.trajectory.active(self.state.step_index).copy()

    def observe(self) -> np.ndarray:
        s = self.state
        obs = np.concatenate([
            s.effector_positions.ravel(),
            s.effector_velocities.ravel(),
            s.prev_action,
            s.cube_position,
            s.cube_position - s.prev_cube_position,
            s.trajectory.active(s.step_index),
        ])
        if self.dr_enabled and self.dr.obs_noise > 0:
            obs[:OBS_GOAL.start] = apply_noise(obs[:OBS_GOAL.start], self.dr.obs_noise, self.rng)
        return obs

    # -- dynamics ----------------------------------------------------------

    def step(self, action) -> tuple[np.ndarray, np.ndarray, dict]:
        """Advance one 0.05 s tick; returns (obs, achieved_goal, info)."""
        if self.state is None:
            raise StateError("reset() must be called before step()")
        if self.done:
            raise StateError("episode finished; call reset()")
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (ACTION_DIM,):
            raise InputError(f"action must have shape ({ACTION_DIM},), got {action.shape}")
        if not np.all(np.isfinite(action)):
            raise InputError("action contains NaN or infinity")
        commanded = np.clip(action, -1.0, 1.0)
        executed = commanded
        if self.dr_enabled and self.dr.action_noise > 0:
            executed = apply_noise(commanded, self.dr.action_noise, self.rng, clip=1.0)

        s = self.state
        p = s.params
        h = p.cube_half_extent
        old = s.effector_positions
        new = old + executed.reshape(N_EFFECTORS, 3) * (p.v_max * p.dt)
        for row in new:
            _clamp_radius(row[:2], p.arena_radius)
        np.clip(new[:, 2], 0.0, p.max_height, out=new[:, 2])
        s.effector_velocities = (new - old) / p.dt
        s.effector_positions = new
        s.prev_action = commanded

        cube = s.cube_position.copy()
        s.prev_cube_position = s.cube_position
        tol = p.grasp_tolerance * (2.0 if s.held else 1.0)
        holders = grasping_effectors(new, cube, h, tol)
        s.held = bool(holders)
        if s.held:
            target = new[holders].mean(axis=0)
            # the floor bounds the target, so a low pinch cannot waste the cap pushing down
            target[2] = max(target[2] - h, h)
            disp = target - cube
            cap = p.lift_speed_cap * p.dt
            norm = math.sqrt(disp @ disp)
            if norm > cap:
                disp *= cap / norm
            cube += disp
        else:
            top = cube[2] + h
            for e in new:
                rel = e[:2] - cube[:2]
                if abs(rel[0]) < h and abs(rel[1]) < h and e[2] < top:
                    pen = h - np.abs(rel)
                    ax = int(np.argmin(pen))
                    direction = -1.0 if rel[ax] > 0 else 1.0
                    cube[ax] += direction * p.push_gain * pen[ax]
            cube[2] -= p.gravity_drop * p.dt
        cube[2] = min(max(cube[2], h), p.max_height)
        _clamp_radius(cube[:2], p.arena_radius - h)
        s.cube_position = cube

        goal = s.trajectory.active(s.step_index).copy()
        goal_index = s.trajectory.index(s.step_index)
        s.step_index += 1
        info = {
            "active_goal": goal,
            "goal_index": goal_index,
            "held": s.held,
            "executed_action": executed,
        }
        return self.observe(), cube.copy(), info
