import json
import subprocess
import sys

import pytest

from trajher.cli import first_reach, main, summarize_ablation

TINY = """\
agent.hidden_sizes = 8
agent.batch_size = 16
train.cycles_per_epoch = 3
train.updates_per_cycle = 2
train.eval_episodes = 2
train.stage1_epochs = 2
train.warmup_epochs = 1
train.stage2_epochs = 1
train.wall_clock = false
"""


@pytest.fixture
def tiny_cfg(tmp_path):
    p = tmp_path / "tiny.txt"
    p.write_text(TINY)
    return p


def test_dump_config_round_trips(capsys, tiny_cfg):
    assert main(["dump-config", str(tiny_cfg), "--preset", "her-standard"]) == 0
    out = capsys.readouterr().out
    assert "her.reward_mode = sparse" in out
    assert "agent.hidden_sizes = 8" in out


def test_train_writes_outputs(tmp_path, tiny_cfg, capsys):
    out = tmp_path / "run"
    assert main(["-q", "train", str(tiny_cfg), "--seed", "3", "--out", str(out)]) == 0
    lines = (out / "metrics.csv").read_text().splitlines()
    assert lines[0].startswith("# config_digest=") and "seed=3" in lines[0]
    assert lines[1].split(",")[:3] == ["epoch", "env_steps", "train_success"]
    assert len(lines) == 2 + 2 + 1 + 1
    events = (out / "events.log").read_text()
    assert events.count("event=buffer_clear") == 1
    assert "event=training_end" in events
    assert (out / "final.ckpt").exists() and (out / "resume.ckpt").exists()
    assert (out / "checkpoints" / "epoch_0001.ckpt").exists()
    assert "train.seed = 3" in (out / "config.txt").read_text()


def test_train_resume_matches_uninterrupted(tmp_path, tiny_cfg):
    full = tmp_path / "full"
    main(["-q", "train", str(tiny_cfg), "--seed", "4", "--out", str(full)])
    part = tmp_path / "part"
    main(["-q", "train", str(tiny_cfg), "--seed", "4", "--out", str(part), "--epochs", "2"])
    assert main(["-q", "train", "--resume", str(part / "resume.ckpt"), "--out", str(part)]) == 0
    assert (full / "metrics.csv").read_bytes() == (part / "metrics.csv").read_bytes()
    assert (full / "events.log").read_bytes() == (part / "events.log").read_bytes()
    assert (full / "final.ckpt").read_bytes() == (part / "final.ckpt").read_bytes()


def test_resume_rejects_different_config(tmp_path, tiny_cfg, capsys):
    out = tmp_path / "r"
    main(["-q", "train", str(tiny_cfg), "--seed", "1", "--out", str(out), "--epochs", "1"])
    code = main(["-q", "train", str(tiny_cfg), "--seed", "2", "--resume", str(out / "resume.ckpt"),
                 "--out", str(out)])
    assert code == 1
    assert "digest mismatch" in capsys.readouterr().err


def test_seed_from_environment(tmp_path, tiny_cfg, monkeypatch):
    monkeypatch.setenv("TRAJHER_SEED", "17")
    out = tmp_path / "e"
    main(["-q", "train", str(tiny_cfg), "--out", str(out), "--epochs", "1"])
    assert "seed=17" in (out / "metrics.csv").read_text().splitlines()[0]
    monkeypatch.setenv("TRAJHER_SEED", "x")
    assert main(["-q", "train", str(tiny_cfg), "--out", str(out), "--epochs", "1"]) == 2


def test_preset_recorded(tmp_path, tiny_cfg):
    out = tmp_path / "p"
    main(["-q", "train", str(tiny_cfg), "--preset", "her-both", "--out", str(out), "--epochs", "1"])
    second = (out / "metrics.csv").read_text().splitlines()[1]
    assert second.startswith("# preset=her-both overrides:") and "her.relabel_z=True" in second


def test_usage_errors(tmp_path, capsys):
    assert main(["train", str(tmp_path / "missing.txt"), "--out", str(tmp_path)]) == 2
    assert "config file not found" in capsys.readouterr().err
    bad = tmp_path / "bad.txt"
    bad.write_text("train.seed = 1\nenv.warp = 2\n")
    assert main(["train", str(bad), "--out", str(tmp_path)]) == 2
    assert "bad.txt:2" in capsys.readouterr().err
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 2


def test_eval_and_score(tmp_path, tiny_cfg, capsys):
    out = tmp_path / "run"
    main(["-q", "train", str(tiny_cfg), "--out", str(out)])
    log = tmp_path / "roll.jsonl"
    assert main(["-q", "eval", str(out / "final.ckpt"), "--episodes", "3", "--stuck-recovery",
                 "--seed", "5", "--log", str(log)]) == 0
    text = capsys.readouterr().out
    assert "success rate:" in text and "+-" in text
    records = [json.loads(l) for l in log.read_text().splitlines()]
    assert len(records) == 3 * 90
    assert {"step", "action", "achieved_goal", "active_goal", "reward", "success"} <= records[0].keys()
    assert main(["score", str(log)]) == 0
    scored = capsys.readouterr().out.splitlines()
    assert len(scored) == 4 and scored[-1].startswith("mean score:")


def test_score_reports_bad_line(tmp_path, capsys):
    log = tmp_path / "bad.jsonl"
    rec = {"episode": 0, "step": 0, "achieved_goal": [0, 0, 0], "active_goal": [0, 0, 0]}
    log.write_text(json.dumps(rec) + "\n" + '{"episode": 0, "step": 1, "achi\n')
    assert main(["score", str(log)]) == 1
    assert "bad.jsonl:2" in capsys.readouterr().err


def test_score_reports_gap(tmp_path, capsys):
    log = tmp_path / "gap.jsonl"
    recs = [{"episode": 0, "step": s, "achieved_goal": [0, 0, 0], "active_goal": [0, 0, 0]} for s in (0, 1, 3)]
    log.write_text("".join(json.dumps(r) + "\n" for r in recs))
    assert main(["score", str(log)]) == 1
    assert "incomplete" in capsys.readouterr().err


def test_eval_bad_checkpoint(tmp_path, capsys):
    junk = tmp_path / "junk.ckpt"
    junk.write_bytes(b"hello")
    assert main(["eval", str(junk)]) == 1
    assert "magic" in capsys.readouterr().err


def test_ablation_tiny(tmp_path, tiny_cfg, capsys):
    out = tmp_path / "abl"
    assert main(["-q", "ablation", str(tiny_cfg), "--seeds", "2", "--budget", "1200",
                 "--arms", "final,her-standard", "--out", str(out)]) == 0
    rows = (out / "ablation.csv").read_text().splitlines()
    assert rows[0] == "arm,seed,epoch,env_steps,eval_success,train_success"
    assert len(rows) == 1 + 2 * 2 * 1
    assert (out / "summary.csv").exists()
    assert "her.reward_mode = sparse" in (out / "config_her-standard.txt").read_text()
    assert main(["ablation", "--arms", "nope", "--out", str(out)]) == 2


def test_summarize_ablation():
    rows = [
        {"arm": "a", "seed": s, "epoch": e, "env_steps": e * 10, "eval_success": v}
        for s, vals in ((0, [0.1, 0.6, 0.9]), (1, [0.0, 0.4, 0.8]), (2, [0.2, 0.5, 0.7]))
        for e, v in zip((1, 2, 3), vals)
    ]
    s = summarize_ablation(rows)["a"]
    assert s["median"] == [0.1, 0.5, 0.8]
    assert s["reach_50"] == 20 and s["reach_80"] == 30
    assert first_reach([1, 2], [0.1, 0.2], 0.5) == float("inf")


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "trajher", "dump-config"], capture_output=True, text=True)
    assert res.returncode == 0 and "train.seed = 0" in res.stdout
