"""Goal-conditioned DDPG: deterministic tanh actor, scalar critic, polyak
targets and running input normalizers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import ACTION_DIM, GOAL_DIM, OBS_CUBE_POS, OBS_DIM, OBS_EFFECTOR_POS, OBS_GOAL
from .errors import ConfigurationError, NumericalError
from .numerics import AdamState, Mlp, RunningNormalizer, SeededRng, adam_step, polyak_update
from .replay import Batch, Episode


@dataclass(frozen=True)
class AgentConfig:
    hidden_sizes: tuple[int, ...] = (256, 256, 256)
    lr_actor: float = 1e-3
    lr_critic: float = 1e-3
    gamma: float = 0.98
    polyak: float = 0.95
    action_l2: float = 1.0
    batch_size: int = 256
    norm_clip: float = 5.0
    norm_eps: float = 1e-2
    # drop the active-goal slice of the observation from network inputs
    strip_obs_goal: bool = True
    # "cycle": one polyak step per update() call; "update": one per gradient step
    target_sync: str = "cycle"
    # append effector-minus-cube and goal-minus-cube offsets to the inputs
    relative_inputs: bool = True

    def validate(self) -> None:
        if not self.hidden_sizes or any(h <= 0 for h in self.hidden_sizes):
            raise ConfigurationError("agent.hidden_sizes must be positive integers")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigurationError(f"agent.gamma must lie in (0, 1), got {self.gamma}")
        if not 0.0 <= self.polyak <= 1.0:
            raise ConfigurationError(f"agent.polyak must lie in [0, 1], got {self.polyak}")
        for name in ("lr_actor", "lr_critic", "norm_clip", "norm_eps"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"agent.{name} must be positive")
        if self.action_l2 < 0:
            raise ConfigurationError("agent.action_l2 must be >= 0")
        if self.batch_size <= 0:
            raise ConfigurationError("agent.batch_size must be positive")
        if self.target_sync not in ("cycle", "update"):
            raise ConfigurationError(f"agent.target_sync must be 'cycle' or 'update', got {self.target_sync!r}")


@dataclass(frozen=True)
class ExplorationConfig:
    random_action_probability: float = 0.3
    gaussian_noise_std: float = 0.2

    def validate(self) -> None:
        if not 0.0 <= self.random_action_probability <= 1.0:
            raise ConfigurationError("explore.random_action_probability must lie in [0, 1]")
        if self.gaussian_noise_std < 0:
            raise ConfigurationError("explore.gaussian_noise_std must be >= 0")


def target_bounds(gamma: float, reward_mode: str, reward_a: float, max_height: float) -> tuple[float, float]:
    """Clip range for bootstrapped critic targets (all rewards are <= 0)."""
    worst = 1.0 + reward_a * max_height if reward_mode == "full" else 1.0
    return -worst / (1.0 - gamma), 0.0


class DdpgAgent:
    def __init__(self, cfg: AgentConfig, rng: SeededRng, clip_low: float,
                 obs_dim: int = OBS_DIM, goal_dim: int = GOAL_DIM, action_dim: int = ACTION_DIM):
        cfg.validate()
        self.cfg = cfg
        self.obs_dim, self.goal_dim, self.action_dim = obs_dim, goal_dim, action_dim
        keep = np.arange(obs_dim)
        if cfg.strip_obs_goal and obs_dim == OBS_DIM:
            keep = np.delete(keep, np.arange(OBS_DIM)[OBS_GOAL])
        self.obs_keep = keep
        self.relative = cfg.relative_inputs and obs_dim == OBS_DIM and goal_dim == GOAL_DIM
        n_obs = len(keep) + (9 if self.relative else 0)
        n_goal = goal_dim * (2 if self.relative else 1)
        n_in = n_obs + n_goal
        hidden = list(cfg.hidden_sizes)
        self.actor = Mlp.initialized([n_in, *hidden, action_dim], rng, "tanh")
        self.critic = Mlp.initialized([n_in + action_dim, *hidden, 1], rng)
        self.target_actor = self.actor.copy()
        self.target_critic = self.critic.copy()
        self.actor_adam = AdamState(self.actor.n_params, lr=cfg.lr_actor)
        self.critic_adam = AdamState(self.critic.n_params, lr=cfg.lr_critic)
        self.obs_norm = RunningNormalizer(n_obs, cfg.norm_eps, cfg.norm_clip)
        self.goal_norm = RunningNormalizer(n_goal, cfg.norm_eps, cfg.norm_clip)
        self.gamma = cfg.gamma
        self.polyak = cfg.polyak
        self.clip_low, self.clip_high = clip_low, 0.0

    # -- inputs ------------------------------------------------------------

    def obs_features(self, obs: np.ndarray) -> np.ndarray:
        feats = obs[..., self.obs_keep]
        if not self.relative:
            return feats
        cube = obs[..., OBS_CUBE_POS]
        eff = obs[..., OBS_EFFECTOR_POS]
        offsets = eff - np.concatenate([cube, cube, cube], axis=-1)
        return np.concatenate([feats, offsets], axis=-1)

    def goal_features(self, obs: np.ndarray, goal: np.ndarray) -> np.ndarray:
        if not self.relative:
            return goal
        return np.concatenate([goal, goal - obs[..., OBS_CUBE_POS]], axis=-1)

    def preprocess(self, obs, goal) -> np.ndarray:
        obs = np.asarray(obs, dtype=np.float64)
        goal = np.asarray(goal, dtype=np.float64)
        if obs.shape[-1] != self.obs_dim or goal.shape[-1] != self.goal_dim:
            raise ConfigurationError(
                f"expected obs/goal widths {self.obs_dim}/{self.goal_dim}, got {obs.shape[-1]}/{goal.shape[-1]}")
        o = self.obs_norm.normalize(self.obs_features(obs))
        g = self.goal_norm.normalize(self.goal_features(obs, goal))
        return np.concatenate([o, g], axis=-1)

    def update_normalizers(self, episode: Episode) -> None:
        """Fold a collected episode into the input statistics. Goal statistics
        see both desired and achieved goals, since relabeled goals come from
        the latter."""
        obs = episode.observations
        self.obs_norm.update(self.obs_features(obs))
        goals = np.concatenate([episode.desired_goals, episode.achieved_goals[1:]])
        paired = np.concatenate([obs[:-1], obs[:-1]])
        self.goal_norm.update(self.goal_features(paired, goals))

    # -- acting ------------------------------------------------------------

    def act_exploit(self, obs, goal) -> np.ndarray:
        return self.actor.forward(self.preprocess(obs, goal))

    def act_explore(self, obs, goal, rng: SeededRng, cfg: ExplorationConfig) -> np.ndarray:
        """Uniform random action with probability ``random_action_probability``,
        otherwise the greedy action plus clipped Gaussian noise."""
        # both draws are always made so the stream length is policy independent
        coin = rng.random()
        uniform = rng.uniform(-1.0, 1.0, self.action_dim)
        noise = rng.normal(0.0, 1.0, self.action_dim)
        if coin < cfg.random_action_probability:
            return uniform
        action = self.act_exploit(obs, goal)
        return np.clip(action + cfg.gaussian_noise_std * noise, -1.0, 1.0)

    # -- losses ------------------------------------------------------------

    def critic_targets(self, batch: Batch) -> np.ndarray:
        x2 = self.preprocess(batch.next_obs, batch.next_goal)
        a2 = self.target_actor.forward(x2)
        q2 = self.target_critic.forward(np.concatenate([x2, a2], axis=1))[:, 0]
        y = batch.reward + self.gamma * q2
        return np.clip(y, self.clip_low, self.clip_high)

    def critic_loss(self, batch: Batch) -> tuple[float, np.ndarray]:
        """Mean squared TD error and its gradient w.r.t. critic parameters."""
        _check_batch(batch)
        y = self.critic_targets(batch)
        x = self.preprocess(batch.obs, batch.goal)
        q, trace = self.critic.forward_trace(np.concatenate([x, batch.action], axis=1))
        diff = q[:, 0] - y
        loss = float(np.mean(diff * diff))
        grad, _ = self.critic.backward(None, (2.0 / len(diff)) * diff[:, None], trace)
        return loss, grad

    def actor_loss(self, batch: Batch) -> tuple[float, np.ndarray]:
        """-mean Q(s, g, pi(s, g)) + action_l2 * mean(pi^2), gradient w.r.t.
        actor parameters only."""
        _check_batch(batch)
        x = self.preprocess(batch.obs, batch.goal)
        pi, a_trace = self.actor.forward_trace(x)
        q, c_trace = self.critic.forward_trace(np.concatenate([x, pi], axis=1))
        n = len(pi)
        c = self.cfg.action_l2
        loss = float(-q.mean() + c * np.mean(pi * pi))
        _, d_in = self.critic.backward(None, np.full((n, 1), -1.0 / n), c_trace, param_grads=False)
        d_pi = d_in[:, -self.action_dim:] + (2.0 * c / pi.size) * pi
        grad, _ = self.actor.backward(None, d_pi, a_trace)
        return loss, grad

    def update(self, batches) -> tuple[list[float], list[float]]:
        """Critic then actor Adam step per batch; polyak updates follow
        ``target_sync`` (after every batch or once at the end)."""
        critic_losses, actor_losses = [], []
        for batch in batches:
            loss, grad = self.critic_loss(batch)
            adam_step(self.critic.params, grad, self.critic_adam)
            critic_losses.append(loss)
            loss, grad = self.actor_loss(batch)
            adam_step(self.actor.params, grad, self.actor_adam)
            actor_losses.append(loss)
            if self.cfg.target_sync == "update":
                self.sync_targets()
        if self.cfg.target_sync == "cycle":
            self.sync_targets()
        return critic_losses, actor_losses

    def sync_targets(self) -> None:
        polyak_update(self.target_actor.params, self.actor.params, self.polyak)
        polyak_update(self.target_critic.params, self.critic.params, self.polyak)


def _check_batch(batch: Batch) -> None:
    for name in ("obs", "goal", "action", "reward", "next_obs", "next_goal"):
        if not np.all(np.isfinite(getattr(batch, name))):
            raise NumericalError(f"non-finite values in batch.{name}")
