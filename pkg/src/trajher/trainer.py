"""Training orchestration: rollouts, epochs, the no-DR -> DR curriculum,
evaluation with optional stuck recovery, and episode scoring."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .agent import DdpgAgent, ExplorationConfig, target_bounds
from .config import Config
from .env import SUCCESS_THRESHOLD, CubeCarryEnv, GoalTrajectory, compute_reward, is_success
from .errors import ConfigurationError, InputError
from .numerics import SeededRng
from .replay import Episode, HerConfig, ReplayBuffer

log = logging.getLogger(__name__)

EXPLORATORY = "exploratory"
EXPLOITING = "exploiting"
STAGES = ("stage1", "warmup", "stage2", "done")


@dataclass
class Rollout:
    episode: Episode
    rewards: np.ndarray
    success: bool
    scales: dict
    random_steps: np.ndarray  # True where stuck recovery injected the action

    @property
    def total_reward(self) -> float:
        return float(self.rewards.sum())

    def records(self, episode_index: int = 0) -> list[dict]:
        """One JSON-ready dict per step for the rollout log."""
        ep = self.episode
        out = []
        for t in range(ep.horizon):
            out.append({
                "episode": episode_index,
                "step": t,
                "action": ep.actions[t].tolist(),
                "achieved_goal": ep.achieved_goals[t + 1].tolist(),
                "active_goal": ep.desired_goals[t].tolist(),
                "reward": float(self.rewards[t]),
                "success": bool(is_success(ep.achieved_goals[t + 1], ep.desired_goals[t])),
                "random_action": bool(self.random_steps[t]),
            })
        return out


class StuckRecovery:
    """Counts consecutive steps with the cube off the goal in x-y; after
    ``patience`` of them the next ``burst`` actions are uniform random.

    The counter also resets when the active goal changes, and after every
    burst.
    """

    def __init__(self, patience: int = 50, burst: int = 7, threshold: float = SUCCESS_THRESHOLD):
        self.patience, self.burst, self.threshold = patience, burst, threshold
        self.counter = 0
        self.remaining = 0
        self._goal = None

    def should_randomize(self, goal: np.ndarray) -> bool:
        if self._goal is not None and not np.array_equal(goal, self._goal):
            self.counter = 0
        self._goal = np.array(goal, dtype=np.float64)
        return self.remaining > 0

    def observe(self, cube: np.ndarray, randomized: bool) -> None:
        if randomized:
            self.remaining -= 1
            if self.remaining == 0:
                self.counter = 0
            return
        if np.hypot(*(cube[:2] - self._goal[:2])) > self.threshold:
            self.counter += 1
        else:
            self.counter = 0
        if self.counter >= self.patience:
            self.remaining = self.burst
            self.counter = 0


def collect_rollout(agent, env: CubeCarryEnv, policy_kind: str, rng: SeededRng,
                    explore: ExplorationConfig | None = None, her: HerConfig | None = None,
                    stuck_recovery: bool = False, trajectory: GoalTrajectory | None = None,
                    cube_position=None) -> Rollout:
    """Run one full episode with the exploratory or the exploiting policy."""
    if policy_kind not in (EXPLORATORY, EXPLOITING):
        raise ConfigurationError(f"unknown policy kind {policy_kind!r}")
    explore = explore or ExplorationConfig()
    her = her or HerConfig()
    obs = env.reset(trajectory=trajectory, cube_position=cube_position)
    T = env.state.params.episode_length
    observations = np.empty((T + 1, env.obs_dim))
    actions = np.empty((T, env.action_dim))
    achieved = np.empty((T + 1, 3))
    desired = np.empty((T, 3))
    segments = np.empty(T, dtype=np.int64)
    rewards = np.empty(T)
    randomized = np.zeros(T, dtype=bool)
    observations[0] = obs
    achieved[0] = env.state.cube_position
    recovery = StuckRecovery() if stuck_recovery else None

    for t in range(T):
        goal = env.active_goal()
        segments[t] = env.state.trajectory.index(t)
        if recovery is not None and recovery.should_randomize(goal):
            action = rng.uniform(-1.0, 1.0, env.action_dim)
            randomized[t] = True
        elif policy_kind == EXPLORATORY:
            action = agent.act_explore(obs, goal, rng, explore)
        else:
            action = agent.act_exploit(obs, goal)
        obs, ag, _ = env.step(action)
        if recovery is not None:
            recovery.observe(ag, randomized[t])
        observations[t + 1] = obs
        actions[t] = np.clip(action, -1.0, 1.0)
        achieved[t + 1] = ag
        desired[t] = goal
        rewards[t] = compute_reward(ag, goal, her.reward_mode, her.reward_a)

    success = bool(is_success(achieved[-1], env.state.trajectory.goals[-1]))
    episode = Episode(observations, actions, achieved, desired, segments)
    return Rollout(episode, rewards, success, dict(env.state.scales), randomized)


def score_episode(records: Sequence[Mapping], d_xy: float = 0.39, d_z: float = 0.27) -> float:
    """Negative cumulative normalised position error over an episode.

    Each step contributes -(0.5 * |e_xy| / d_xy + 0.5 * |e_z| / d_z), with e
    the cube-minus-goal error at that step.
    """
    if not records:
        raise InputError("cannot score an empty rollout")
    total = 0.0
    for i, rec in enumerate(records):
        try:
            step = int(rec["step"])
            cube = np.asarray(rec["achieved_goal"], dtype=np.float64)
            goal = np.asarray(rec["active_goal"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"rollout record {i} is incomplete: {exc}") from exc
        if step != i:
            raise InputError(f"rollout record {i} has step {step}; log is incomplete")
        if cube.shape != (3,) or goal.shape != (3,):
            raise InputError(f"rollout record {i} positions must be 3-d")
        e = cube - goal
        total -= 0.5 * math.hypot(e[0], e[1]) / d_xy + 0.5 * abs(e[2]) / d_z
    return total


@dataclass
class EpochMetrics:
    epoch: int
    env_steps: int
    train_success: float
    eval_success: float
    mean_episode_reward: float
    critic_loss: float
    actor_loss: float
    stage: str
    buffer_size: int
    update_steps: int
    wall_time_s: float

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def row(self) -> list[str]:
        return [repr(v) if isinstance(v, float) else str(v) for v in asdict(self).values()]


@dataclass
class Event:
    epoch: int
    env_steps: int
    stage: str
    event: str
    detail: str = ""

    def line(self) -> str:
        text = f"epoch={self.epoch} env_steps={self.env_steps} stage={self.stage} event={self.event}"
        return f"{text} {self.detail}".rstrip()


@dataclass
class EvalReport:
    success_rate: float
    scores: list[float]
    rollouts: list[Rollout] = field(repr=False)

    @property
    def score_mean(self) -> float:
        return float(np.mean(self.scores))

    @property
    def score_std(self) -> float:
        return float(np.std(self.scores, ddof=1)) if len(self.scores) > 1 else 0.0


def evaluate(agent, env: CubeCarryEnv, n_episodes: int, stuck_recovery: bool, rng: SeededRng,
             her: HerConfig | None = None, d_xy: float = 0.39, d_z: float = 0.27) -> EvalReport:
    rollouts = [collect_rollout(agent, env, EXPLOITING, rng, her=her, stuck_recovery=stuck_recovery)
                for _ in range(n_episodes)]
    scores = [score_episode(r.records(i), d_xy, d_z) for i, r in enumerate(rollouts)]
    success = float(np.mean([r.success for r in rollouts])) if rollouts else 0.0
    return EvalReport(success, scores, rollouts)


class Trainer:
    """Owns every piece of mutable training state; one instance per run."""

    def __init__(self, config: Config, seed: int | None = None):
        config.validate()
        self.config = config
        self.seed = config.train.seed if seed is None else int(seed)
        self.rng = SeededRng(self.seed)
        clip_low, _ = target_bounds(config.agent.gamma, config.her.reward_mode,
                                    config.her.reward_a, config.env.max_height)
        self.agent = DdpgAgent(config.agent, self.rng, clip_low)
        self.env = CubeCarryEnv(config.env, config.dr, self.rng)
        self.buffer = ReplayBuffer(config.train.buffer_capacity, config.env.episode_length)
        self.epoch = 0
        self.env_steps = 0
        self.stage = "stage1"
        self.stage_epoch = 0
        self.stage_history: list[float] = []
        self.status = "running"
        self.started = False
        self.log: list[EpochMetrics | Event] = []
        self.on_metrics: Callable[[EpochMetrics], None] | None = None
        self.on_event: Callable[[Event], None] | None = None
        self.sync_env()

    def sync_env(self) -> None:
        self.env.dr_enabled = self.stage in ("warmup", "stage2") and self.config.dr.enabled

    def _emit(self, name: str, detail: str = "") -> None:
        ev = Event(self.epoch, self.env_steps, self.stage, name, detail)
        self.log.append(ev)
        log.info(ev.line())
        if self.on_event:
            self.on_event(ev)

    def _rollout(self, kind: str) -> Rollout:
        cfg = self.config
        r = collect_rollout(self.agent, self.env, kind, self.rng, cfg.explore, cfg.her)
        self.env_steps += r.episode.horizon
        self.agent.update_normalizers(r.episode)
        return r

    def _batches(self, n: int) -> Iterable:
        cfg = self.config
        for _ in range(n):
            yield self.buffer.sample_batch(cfg.agent.batch_size, cfg.her, self.rng)

    def run_epoch(self, updates: bool = True) -> EpochMetrics:
        """Collection/update cycles, then exploiting evaluation episodes that
        are also stored in the buffer."""
        tc = self.config.train
        start = time.perf_counter()
        train_rollouts: list[Rollout] = []
        closs: list[float] = []
        aloss: list[float] = []
        self.scales_seen: list[dict] = []
        for _ in range(tc.cycles_per_epoch):
            for _ in range(tc.rollouts_per_cycle):
                r = self._rollout(EXPLORATORY)
                self.buffer.store(r.episode)
                train_rollouts.append(r)
                self.scales_seen.append(r.scales)
            if updates and tc.updates_per_cycle > 0:
                c, a = self.agent.update(self._batches(tc.updates_per_cycle))
                closs.extend(c)
                aloss.extend(a)
        eval_rollouts = []
        for _ in range(tc.eval_episodes):
            r = self._rollout(EXPLOITING)
            if tc.store_eval_episodes:
                self.buffer.store(r.episode)
            eval_rollouts.append(r)
            self.scales_seen.append(r.scales)
        self.epoch += 1
        self.stage_epoch += 1
        metrics = EpochMetrics(
            epoch=self.epoch,
            env_steps=self.env_steps,
            train_success=_mean([r.success for r in train_rollouts]),
            eval_success=_mean([r.success for r in eval_rollouts]),
            mean_episode_reward=_mean([r.total_reward for r in train_rollouts]),
            critic_loss=_mean(closs),
            actor_loss=_mean(aloss),
            stage=self.stage,
            buffer_size=len(self.buffer),
            update_steps=len(closs),
            wall_time_s=round(time.perf_counter() - start, 3) if tc.wall_clock else 0.0,
        )
        self.log.append(metrics)
        log.info("epoch %d %s steps=%d eval_success=%.2f train_success=%.2f",
                 metrics.epoch, metrics.stage, metrics.env_steps, metrics.eval_success, metrics.train_success)
        if self.on_metrics:
            self.on_metrics(metrics)
        return metrics

    def _converged(self) -> bool:
        tc = self.config.train
        window = self.stage_history[-tc.converge_window:]
        return len(window) == tc.converge_window and max(window) - min(window) < tc.converge_delta

    def step_curriculum(self) -> None:
        """Run one epoch of the curriculum and handle any stage transition."""
        tc = self.config.train
        if self.stage == "done":
            return
        if not self.started:
            self.started = True
            self._emit("stage_start")
        if self.stage == "stage1":
            m = self.run_epoch(updates=True)
            reached = m.eval_success >= tc.success_threshold
            if reached or self.stage_epoch >= tc.stage1_epochs:
                self._emit("stage_end", "reason=" + ("threshold" if reached else "max_epochs"))
                if not reached:
                    log.warning("stage1 ended at max epochs without reaching success %.2f", tc.success_threshold)
                self.buffer.clear()
                self._enter("warmup")
                self._emit("buffer_clear")
                self._emit("stage_start", f"dr_enabled={self.env.dr_enabled}")
        elif self.stage == "warmup":
            if self.stage_epoch < tc.warmup_epochs:
                self.run_epoch(updates=False)
            if self.stage_epoch >= tc.warmup_epochs:
                self._emit("stage_end", "reason=warmup_complete")
                self._enter("stage2")
                self._emit("stage_start", f"dr_enabled={self.env.dr_enabled}")
        elif self.stage == "stage2":
            if tc.stage2_epochs > 0:
                m = self.run_epoch(updates=True)
                self.stage_history.append(m.eval_success)
            converged = self._converged()
            if converged or self.stage_epoch >= tc.stage2_epochs:
                self.status = "converged" if converged else "max_epochs"
                if not converged:
                    log.warning("stage2 ended at max epochs without converging")
                self._emit("stage_end", f"reason={self.status}")
                self._enter("done")
                self._emit("training_end", f"status={self.status}")

    def _enter(self, stage: str) -> None:
        self.stage = stage
        self.stage_epoch = 0
        self.stage_history = []
        self.sync_env()

    def train_curriculum(self) -> list[EpochMetrics | Event]:
        while self.stage != "done":
            self.step_curriculum()
        return self.log

    def progress(self) -> dict:
        return {
            "epoch": self.epoch, "env_steps": self.env_steps, "stage": self.stage,
            "stage_epoch": self.stage_epoch, "stage_history": list(self.stage_history),
            "status": self.status, "seed": self.seed, "started": self.started,
        }

    def restore_progress(self, p: Mapping) -> None:
        if p["stage"] not in STAGES:
            raise InputError(f"unknown stage {p['stage']!r}")
        self.epoch, self.env_steps = int(p["epoch"]), int(p["env_steps"])
        self.stage, self.stage_epoch = p["stage"], int(p["stage_epoch"])
        self.stage_history = [float(x) for x in p["stage_history"]]
        self.status = p["status"]
        self.started = bool(p["started"])
        self.sync_env()


def train_curriculum(config: Config, seed: int | None = None) -> tuple[Trainer, list]:
    trainer = Trainer(config, seed)
    return trainer, trainer.train_curriculum()


def _mean(values) -> float:
    return float(np.mean(values)) if len(values) else float("nan")
