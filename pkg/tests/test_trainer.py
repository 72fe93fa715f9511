import numpy as np
import pytest

from trajher.config import Config
from trajher.env import CubeCarryEnv, EnvParams, GoalTrajectory
from trajher.errors import ConfigurationError, InputError
from trajher.numerics import SeededRng
from trajher.trainer import (
    EXPLOITING, EXPLORATORY, EpochMetrics, StuckRecovery, Trainer, collect_rollout,
    evaluate, score_episode,
)

from scripted import ScriptedPinch

H = EnvParams().cube_half_extent


def tiny_config(**train):
    base = {"agent.hidden_sizes": "8", "agent.batch_size": 16, "train.cycles_per_epoch": 5,
            "train.updates_per_cycle": 2, "train.eval_episodes": 2, "train.wall_clock": False}
    base.update({f"train.{k}": v for k, v in train.items()})
    return Config().with_overrides(base)


class ZeroAgent:
    def act_exploit(self, obs, goal):
        return np.zeros(9)

    def act_explore(self, obs, goal, rng, cfg):
        return np.zeros(9)


# -- rollouts -------------------------------------------------------------------

def test_rollout_shapes_and_segments():
    env = CubeCarryEnv(rng=SeededRng(0))
    r = collect_rollout(ZeroAgent(), env, EXPLORATORY, SeededRng(1))
    ep = r.episode
    assert ep.observations.shape == (91, 36) and ep.actions.shape == (90, 9)
    assert ep.achieved_goals.shape == (91, 3)
    assert ep.segment_ids.tolist() == [0] * 30 + [1] * 30 + [2] * 30
    np.testing.assert_array_equal(ep.desired_goals[60], env.state.trajectory.goals[2])
    ep.validate()


def test_rollout_rewards_match_records():
    env = CubeCarryEnv(rng=SeededRng(0))
    r = collect_rollout(ZeroAgent(), env, EXPLOITING, SeededRng(1))
    recs = r.records(3)
    assert len(recs) == 90 and recs[0]["episode"] == 3
    assert [rec["reward"] for rec in recs] == r.rewards.tolist()
    assert r.total_reward == pytest.approx(sum(rec["reward"] for rec in recs))


def test_unknown_policy_kind():
    with pytest.raises(ConfigurationError):
        collect_rollout(ZeroAgent(), CubeCarryEnv(), "greedy", SeededRng(0))


def test_scripted_oracle_succeeds_on_floor_trajectory():
    env = CubeCarryEnv(rng=SeededRng(0))
    traj = GoalTrajectory(np.array([[0.05, 0.05, H], [-0.05, 0.0, H], [0.0, -0.08, H]]))
    r = collect_rollout(ScriptedPinch(), env, EXPLOITING, SeededRng(0), trajectory=traj,
                        cube_position=[0.1, 0.0, H])
    assert r.success


def test_scripted_oracle_floor_goal_success_rate():
    params = EnvParams(floor_goal_prob=1.0)
    env = CubeCarryEnv(params, rng=SeededRng(3))
    report = evaluate(ScriptedPinch(params), env, 20, False, SeededRng(4))
    assert report.success_rate == 1.0
    assert len(report.scores) == 20 and report.score_std >= 0


def test_zero_agent_eval_fails():
    report = evaluate(ZeroAgent(), CubeCarryEnv(rng=SeededRng(5)), 5, False, SeededRng(6))
    assert report.success_rate == 0.0
    assert all(s < 0 for s in report.scores)


# -- stuck recovery --------------------------------------------------------------

def unreachable_run():
    env = CubeCarryEnv(rng=SeededRng(0))
    goal = [-0.12, -0.1, 0.1]
    traj = GoalTrajectory(np.tile(goal, (3, 1)))
    return collect_rollout(ZeroAgent(), env, EXPLOITING, SeededRng(1), stuck_recovery=True,
                           trajectory=traj, cube_position=[0.12, 0.1, H])


def test_stuck_recovery_trace():
    r = unreachable_run()
    injected = np.flatnonzero(r.random_steps) + 1  # 1-based step numbers
    assert injected.tolist() == list(range(51, 58))


def test_stuck_recovery_periodic_on_long_stream():
    rec = StuckRecovery()
    goal, cube = np.array([0.1, 0.1, 0.1]), np.zeros(3)
    flags = []
    for _ in range(300):
        flag = rec.should_randomize(goal)
        rec.observe(cube, flag)
        flags.append(flag)
    steps = np.flatnonzero(flags) + 1
    runs = np.split(steps, np.flatnonzero(np.diff(steps) > 1) + 1)
    assert [run[0] for run in runs] == [51, 108, 165, 222, 279]
    assert all(len(run) == 7 for run in runs[:-1])


def test_stuck_counter_resets_on_goal_change_and_success():
    rec = StuckRecovery()
    far = np.array([0.1, 0.1, 0.1])
    for _ in range(49):
        rec.observe(np.zeros(3), rec.should_randomize(far))
    assert rec.counter == 49
    rec.should_randomize(far + 0.01)
    assert rec.counter == 0
    rec.observe(np.zeros(3), False)
    rec.should_randomize(far)
    rec.observe(far, False)
    assert rec.counter == 0


# -- score ------------------------------------------------------------------------

def test_score_hand_computed():
    recs = [
        {"step": 0, "achieved_goal": [0.03, 0.04, 0.0], "active_goal": [0.0, 0.0, 0.0]},
        {"step": 1, "achieved_goal": [0.0, 0.0, 0.1], "active_goal": [0.0, 0.0, 0.127]},
        {"step": 2, "achieved_goal": [0.1, 0.1, 0.1], "active_goal": [0.1, 0.1, 0.1]},
    ]
    expected = -(0.5 * 0.05 / 0.39) - (0.5 * 0.027 / 0.27)
    assert score_episode(recs) == pytest.approx(expected, abs=1e-12)


def test_score_rejects_gaps_and_empty():
    recs = [{"step": 0, "achieved_goal": [0, 0, 0], "active_goal": [0, 0, 0]},
            {"step": 2, "achieved_goal": [0, 0, 0], "active_goal": [0, 0, 0]}]
    with pytest.raises(InputError, match="incomplete"):
        score_episode(recs)
    with pytest.raises(InputError):
        score_episode([])
    with pytest.raises(InputError):
        score_episode([{"step": 0}])


# -- epochs -------------------------------------------------------------------

def test_epoch_step_and_episode_counts():
    cfg = Config().with_overrides({"agent.hidden_sizes": "8", "train.updates_per_cycle": 0,
                                   "train.wall_clock": False})
    tr = Trainer(cfg, seed=0)
    m = tr.run_epoch()
    assert m.env_steps == (50 * 2 + 10) * 90 == 9900
    assert m.buffer_size == 110
    assert m.update_steps == 0
    assert m.wall_time_s == 0.0
    assert 0.0 <= m.train_success <= 1.0 and 0.0 <= m.eval_success <= 1.0


def test_epoch_updates_and_metrics_row():
    tr = Trainer(tiny_config(), seed=1)
    m = tr.run_epoch()
    assert m.update_steps == 5 * 2
    assert tr.agent.critic_adam.step == 10
    row = m.row()
    assert len(row) == len(EpochMetrics.columns())
    assert EpochMetrics.columns()[0] == "epoch" and row[0] == "1"


def test_normalizer_sees_every_episode():
    tr = Trainer(tiny_config(), seed=2)
    tr.run_epoch()
    assert tr.agent.obs_norm.count == (5 * 2 + 2) * 91


def test_trainer_is_deterministic():
    a = Trainer(tiny_config(), seed=3).run_epoch()
    b = Trainer(tiny_config(), seed=3).run_epoch()
    assert a.row() == b.row()
    c = Trainer(tiny_config(), seed=4).run_epoch()
    assert a.row() != c.row()


# -- curriculum ----------------------------------------------------------------

def run_small_curriculum(**train):
    cfg = tiny_config(stage1_epochs=2, warmup_epochs=2, stage2_epochs=3, **train)
    tr = Trainer(cfg, seed=5)
    per_epoch_scales = {}
    tr.on_metrics = lambda m: per_epoch_scales.__setitem__(m.epoch, list(tr.scales_seen))
    log = tr.train_curriculum()
    return tr, log, per_epoch_scales


def test_curriculum_sequence():
    tr, log, scales = run_small_curriculum()
    events = [(e.stage, e.event, e.detail) for e in log if not isinstance(e, EpochMetrics)]
    names = [e[1] for e in events]
    assert names.count("buffer_clear") == 1
    assert names == ["stage_start", "stage_end", "buffer_clear", "stage_start", "stage_end",
                     "stage_start", "stage_end", "training_end"]
    metrics = [e for e in log if isinstance(e, EpochMetrics)]
    stages = [m.stage for m in metrics]
    assert stages == ["stage1"] * 2 + ["warmup"] * 2 + ["stage2"] * len(stages[4:])
    assert all(m.update_steps == 0 for m in metrics if m.stage == "warmup")
    assert all(m.update_steps > 0 for m in metrics if m.stage != "warmup")
    # buffer cleared before warm-up: first warm-up epoch holds only its own episodes
    assert metrics[2].buffer_size == 12
    # DR only after stage 1
    assert all(s["push_gain"] == 1.0 for e in (1, 2) for s in scales[e])
    dr = [s["push_gain"] for e in scales if e > 2 for s in scales[e]]
    assert np.std(dr) > 0
    assert tr.status in ("converged", "max_epochs")


def test_curriculum_stage1_threshold_zero_ends_after_one_epoch():
    _, log, _ = run_small_curriculum(success_threshold=0.0)
    ends = [e for e in log if not isinstance(e, EpochMetrics) and e.event == "stage_end"]
    assert ends[0].epoch == 1 and ends[0].detail == "reason=threshold"


def test_progress_round_trip():
    tr, _, _ = run_small_curriculum()
    fresh = Trainer(tr.config, seed=5)
    fresh.restore_progress(tr.progress())
    assert fresh.progress() == tr.progress()
    with pytest.raises(InputError):
        fresh.restore_progress({**tr.progress(), "stage": "stage9"})
