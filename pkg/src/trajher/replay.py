"""Episode replay buffer with hindsight goal relabeling.

Rewards are never stored. Every sampled transition gets its reward
recomputed from the achieved goal after the action and the (possibly
relabeled) goal, so original and relabeled transitions are treated alike.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import REWARD_MODES, compute_reward
from .errors import ConfigurationError, InputError, StateError
from .numerics import SeededRng


@dataclass
class Episode:
    observations: np.ndarray  # (T+1, obs_dim)
    actions: np.ndarray  # (T, action_dim)
    achieved_goals: np.ndarray  # (T+1, 3)
    desired_goals: np.ndarray  # (T, 3)
    segment_ids: np.ndarray  # (T,)

    @property
    def horizon(self) -> int:
        return self.actions.shape[0]

    def validate(self) -> None:
        T = self.horizon
        shapes = {
            "observations": (self.observations.shape[0], T + 1),
            "achieved_goals": (self.achieved_goals.shape[0], T + 1),
            "desired_goals": (self.desired_goals.shape[0], T),
            "segment_ids": (self.segment_ids.shape[0], T),
        }
        for name, (got, want) in shapes.items():
            if got != want:
                raise InputError(f"episode {name} has length {got}, expected {want}")
        if self.achieved_goals.shape[1:] != (3,) or self.desired_goals.shape[1:] != (3,):
            raise InputError("goals must be 3-d")
        if np.any(np.diff(self.segment_ids) < 0):
            raise InputError("segment ids must be non-decreasing")
        for seg in np.unique(self.segment_ids):
            goals = self.desired_goals[self.segment_ids == seg]
            if not np.all(goals == goals[0]):
                raise InputError(f"desired goal changes inside segment {seg}")
        for name in ("observations", "actions", "achieved_goals", "desired_goals"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise InputError(f"episode {name} contains non-finite values")


@dataclass(frozen=True)
class HerConfig:
    relabel_probability: float = 0.8
    segment_restricted: bool = True
    relabel_z: bool = False
    reward_mode: str = "full"
    reward_a: float = 20.0

    def validate(self) -> None:
        if not 0.0 <= self.relabel_probability <= 1.0:
            raise ConfigurationError(f"her.relabel_probability must lie in [0, 1], got {self.relabel_probability}")
        if self.reward_mode not in REWARD_MODES:
            raise ConfigurationError(f"her.reward_mode must be one of {REWARD_MODES}, got {self.reward_mode!r}")
        if not self.reward_a > 0:
            raise ConfigurationError("her.reward_a must be positive")


@dataclass
class Batch:
    obs: np.ndarray
    goal: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_obs: np.ndarray
    next_goal: np.ndarray
    # bookkeeping for inspection; not used by the learner
    next_achieved: np.ndarray
    episode_index: np.ndarray
    t: np.ndarray
    future_t: np.ndarray  # -1 where no relabel happened
    relabeled: np.ndarray

    def __len__(self) -> int:
        return self.obs.shape[0]


def recompute_reward(next_achieved, goal, her: HerConfig):
    """Reward for reaching ``next_achieved`` under ``goal``."""
    return compute_reward(next_achieved, goal, her.reward_mode, her.reward_a)


class ReplayBuffer:
    """FIFO ring of whole episodes, stored as stacked arrays.

    Storage grows by doubling up to ``capacity`` so small runs stay small.
    """

    def __init__(self, capacity: int = 10_000, horizon: int = 90, obs_dim: int = 36,
                 action_dim: int = 9, goal_dim: int = 3):
        if capacity <= 0:
            raise ConfigurationError("buffer capacity must be positive")
        self.capacity = int(capacity)
        self.horizon = int(horizon)
        self.obs_dim, self.action_dim, self.goal_dim = obs_dim, action_dim, goal_dim
        self.inserted = 0
        self._alloc(min(self.capacity, 128))

    def _alloc(self, n: int) -> None:
        T = self.horizon
        fresh = {
            "obs": np.zeros((n, T + 1, self.obs_dim)),
            "actions": np.zeros((n, T, self.action_dim)),
            "ag": np.zeros((n, T + 1, self.goal_dim)),
            "g": np.zeros((n, T, self.goal_dim)),
            "seg": np.zeros((n, T), dtype=np.int64),
            "seg_end": np.zeros((n, T), dtype=np.int64),
        }
        old = getattr(self, "_store", None)
        if old is not None:
            k = self.size
            for key, arr in fresh.items():
                arr[:k] = old[key][:k]
        self._store = fresh

    @property
    def size(self) -> int:
        return min(self.inserted, self.capacity)

    def __len__(self) -> int:
        return self.size

    def store(self, episode: Episode) -> None:
        episode.validate()
        if episode.horizon != self.horizon:
            raise InputError(f"episode horizon {episode.horizon} != buffer horizon {self.horizon}")
        if episode.observations.shape[1] != self.obs_dim:
            raise InputError(f"observation width {episode.observations.shape[1]} != {self.obs_dim}")
        slot = self.inserted % self.capacity
        while slot >= self._store["obs"].shape[0]:
            self._alloc(min(self.capacity, 2 * self._store["obs"].shape[0]))
        s = self._store
        s["obs"][slot] = episode.observations
        s["actions"][slot] = episode.actions
        s["ag"][slot] = episode.achieved_goals
        s["g"][slot] = episode.desired_goals
        s["seg"][slot] = episode.segment_ids
        seg = episode.segment_ids
        last = np.empty_like(seg)
        for sid in np.unique(seg):
            idx = np.flatnonzero(seg == sid)
            last[idx] = idx[-1]
        s["seg_end"][slot] = last
        self.inserted += 1

    def _slot(self, i: int) -> int:
        """Physical slot of the i-th oldest stored episode."""
        if not 0 <= i < self.size:
            raise IndexError(i)
        start = self.inserted - self.size
        return (start + i) % self.capacity

    def episode(self, i: int) -> Episode:
        """The i-th oldest stored episode (copy)."""
        k = self._slot(i)
        s = self._store
        return Episode(s["obs"][k].copy(), s["actions"][k].copy(), s["ag"][k].copy(),
                       s["g"][k].copy(), s["seg"][k].copy())

    def episodes(self) -> list[Episode]:
        return [self.episode(i) for i in range(self.size)]

    def clear(self) -> None:
        self.inserted = 0
        self._store = None
        self._alloc(min(self.capacity, 128))

    def sample_batch(self, batch_size: int, her: HerConfig, rng: SeededRng) -> Batch:
        """Uniform transitions with future-goal relabeling.

        With probability ``her.relabel_probability`` a transition at step t
        has its goal's x-y (and z too when ``relabel_z``) replaced by the
        achieved goal at a step t' drawn uniformly from (t, end] where end is
        the last step of t's segment (``segment_restricted``) or the final
        achieved goal index T otherwise. Transitions with no such t' keep
        their goal. ``next_goal`` always equals ``goal``.
        """
        if self.size == 0:
            raise StateError("cannot sample from an empty replay buffer")
        T = self.horizon
        s = self._store
        ep = rng.integers(0, self.size, batch_size)
        t = rng.integers(0, T, batch_size)
        relabel = rng.random(batch_size) < her.relabel_probability
        u = rng.random(batch_size)

        end = s["seg_end"][ep, t] if her.segment_restricted else np.full(batch_size, T)
        n_future = end - t
        future_t = t + 1 + np.floor(u * n_future).astype(np.int64)
        apply = relabel & (n_future > 0)

        goal = s["g"][ep, t].copy()
        hindsight = s["ag"][ep[apply], future_t[apply]]
        if her.relabel_z:
            goal[apply] = hindsight
        else:
            goal[apply, :2] = hindsight[:, :2]
        next_achieved = s["ag"][ep, t + 1]
        reward = recompute_reward(next_achieved, goal, her)
        return Batch(
            obs=s["obs"][ep, t],
            goal=goal,
            action=s["actions"][ep, t],
            reward=reward,
            next_obs=s["obs"][ep, t + 1],
            next_goal=goal.copy(),
            next_achieved=next_achieved,
            episode_index=ep,
            t=t,
            future_t=np.where(apply, future_t, -1),
            relabeled=apply,
        )

    # raw access for checkpointing
    def state_arrays(self) -> dict[str, np.ndarray]:
        order = [self._slot(i) for i in range(self.size)]
        return {key: self._store[key][order] for key in ("obs", "actions", "ag", "g", "seg")}

    def load_arrays(self, arrays: dict[str, np.ndarray], inserted: int) -> None:
        """Restore from :meth:`state_arrays` output (oldest first)."""
        n = arrays["obs"].shape[0]
        if n > self.capacity or inserted < n:
            raise InputError(f"cannot restore {n} episodes (inserted={inserted}) into capacity {self.capacity}")
        self._store = None
        # replay the ring phase so physical slots match the saved buffer
        self.inserted = inserted - n
        self._alloc(self.capacity if self.inserted else min(self.capacity, max(n, 128)))
        for i in range(n):
            self.store(Episode(arrays["obs"][i], arrays["actions"][i], arrays["ag"][i],
                               arrays["g"][i], arrays["seg"][i]))
