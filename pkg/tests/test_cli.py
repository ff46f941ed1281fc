import csv
import json

import numpy as np
import pytest

from vrpssr.cli import main
from vrpssr.config import PAPER_INSTANCE, PAPER_TRAINING, resolve
from vrpssr.instance_gen import Cell, load_instance
from vrpssr.observation import read_pgm

TINY = ["--set", "instance.width=4", "--set", "instance.height=4", "--set", "instance.horizon=12",
        "--set", "instance.depot=[2,2]", "--set", "instance.cluster_centers=[[1,1]]",
        "--set", "instance.cluster_weights=[1.0]", "--set", "instance.initial_mean=2",
        "--set", "instance.ongoing_mean_total=2", "--set", "training.warmup_steps=50",
        "--set", "training.batch_size=8", "--set", "training.memory_capacity=1000",
        "--set", "training.target_sync_every=40", "--set", "training.train_every=4"]


def run(*argv):
    return main([str(a) for a in argv])


def test_paper_preset_golden_values():
    r = resolve("paper")
    i, t = r.instance, r.training
    assert (i.width, i.height, i.horizon, i.reward_per_customer) == (32, 32, 230, 10.0)
    assert (i.initial_mean, i.ongoing_mean_total) == (15.0, 15.0)
    assert i.cluster_weights == (0.25, 0.5, 0.25)
    assert (t.gamma, t.eps_start, t.eps_end, t.eps_decay_steps) == (0.99, 1.0, 0.1, 1_000_000)
    assert (t.memory_capacity, t.warmup_steps, t.train_every, t.batch_size) == (1_000_000, 10_000, 16, 32)
    assert (t.per_alpha, t.per_beta0, t.per_beta_steps) == (0.6, 0.4, 600_000)
    assert (t.target_sync_every, t.learning_rate, t.episodes) == (2_000, 0.001, 25_000)
    assert i == PAPER_INSTANCE and t == PAPER_TRAINING


def test_small_preset_values():
    r = resolve("small")
    i, t = r.instance, r.training
    assert (i.width, i.height, i.horizon, len(i.cluster_centers)) == (8, 8, 40, 2)
    assert (i.initial_mean, i.ongoing_mean_total) == (4.0, 4.0)
    assert (t.eps_decay_steps, t.warmup_steps, t.per_beta_steps) == (50_000, 1_000, 30_000)
    assert (t.target_sync_every, t.memory_capacity, t.episodes) == (500, 50_000, 2_000)


def test_overrides_and_config_file(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"preset": "paper", "instance": {"horizon": 100}, "seed": 4}))
    r = resolve(file=cfg, overrides=["training.batch_size=64", "instance.depot=[3,3]"])
    assert r.preset == "paper" and r.instance.horizon == 100 and r.seed == 4
    assert r.training.batch_size == 64 and r.instance.depot == Cell(3, 3)
    with pytest.raises(ValueError):
        resolve(overrides=["training.nonsense=1"])


def test_generate_count_and_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("generate", "--preset", "paper", "--count", 3, "--seed", 10, "--out", a) == 0
    assert run("generate", "--preset", "paper", "--count", 3, "--seed", 10, "--out", b) == 0
    files = sorted(p.name for p in a.iterdir())
    assert files == ["instance_00000010.json", "instance_00000011.json", "instance_00000012.json",
                     "manifest.json"]
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert load_instance(a / "instance_00000011.json").seed == 11
    assert len(json.loads((a / "manifest.json").read_text())["instances"]) == 3


def test_generate_zero(tmp_path):
    assert run("generate", "--count", 0, "--out", tmp_path) == 0
    assert json.loads((tmp_path / "manifest.json").read_text())["instances"] == []


def test_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("VRPSSR_OUT", str(tmp_path))
    assert run("generate", "--count", 1) == 0
    assert (tmp_path / "instances-small" / "manifest.json").exists()


def _log(path):
    out = []
    for line in path.read_text().splitlines():
        d = json.loads(line)
        d.pop("wall_time")
        out.append(d)
    return out


def test_train_ten_episodes(tmp_path):
    assert run("train", *TINY, "--set", "training.episodes=10", "--out", tmp_path, "--print-every", 0) == 0
    log = _log(tmp_path / "train_log.jsonl")
    assert [r["episode"] for r in log] == list(range(10))
    assert (tmp_path / "latest.ckpt").exists()
    cfg = json.loads((tmp_path / "config.json").read_text())
    assert cfg["instance"]["width"] == 4 and cfg["training"]["episodes"] == 10
    rows = list(csv.DictReader(open(tmp_path / "training_curve.csv")))
    assert len(rows) == 10 and set(rows[0]) == {"episode", "return", "trailing_mean"}


def test_interrupt_and_resume_matches(tmp_path):
    full, part = tmp_path / "full", tmp_path / "part"
    common = [*TINY, "--checkpoint-replay", "--print-every", 0]
    assert run("train", *common, "--set", "training.episodes=20", "--out", full) == 0
    assert run("train", *common, "--set", "training.episodes=8", "--out", part) == 0
    assert run("train", *common, "--set", "training.episodes=20", "--out", part, "--resume") == 0
    assert _log(part / "train_log.jsonl") == _log(full / "train_log.jsonl")
    assert (part / "latest.ckpt").read_bytes() == (full / "latest.ckpt").read_bytes()


def test_resume_mismatch_is_usage_error(tmp_path, capsys):
    assert run("train", *TINY, "--set", "training.episodes=2", "--out", tmp_path, "--print-every", 0) == 0
    code = run("train", *TINY, "--set", "training.episodes=4", "--set", "training.learning_rate=0.5",
               "--out", tmp_path, "--resume")
    assert code == 2
    assert "learning_rate" in capsys.readouterr().err


def test_resume_without_checkpoint(tmp_path):
    assert run("train", *TINY, "--out", tmp_path, "--resume") == 2


def test_dry_run_full_scale(tmp_path, capsys):
    assert run("train", "--preset", "paper", "--dry-run", "--out", tmp_path) == 0
    out = capsys.readouterr().out
    assert '"horizon": 230' in out and "estimated memory" in out
    assert not (tmp_path / "train_log.jsonl").exists()


def test_eval_policies_report_and_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["eval", "--preset", "small", "--policy", "random", "--policy", "greedy", "--count", 20]
    assert run(*args, "--out", a) == 0
    assert run(*args, "--out", b) == 0
    assert (a / "eval_report.csv").read_bytes() == (b / "eval_report.csv").read_bytes()
    rows = {r["policy"]: r for r in csv.DictReader(open(a / "eval_report.csv"))}
    assert float(rows["greedy"]["mean_return"]) >= float(rows["random"]["mean_return"])
    lines = (a / "eval_episodes.jsonl").read_text().splitlines()
    assert len(lines) == 40
    assert {"episode", "episode_return", "served", "policy"} <= set(json.loads(lines[0]))


def test_eval_checkpoint_twice_identical(tmp_path):
    train = tmp_path / "train"
    assert run("train", *TINY, "--set", "training.episodes=5", "--out", train, "--print-every", 0) == 0
    ckpt = train / "latest.ckpt"
    reports = []
    for name in ("e1", "e2"):
        assert run("eval", *TINY, "--checkpoint", ckpt, "--count", 5, "--out", tmp_path / name) == 0
        reports.append((tmp_path / name / "eval_report.csv").read_bytes())
    assert reports[0] == reports[1]


def test_eval_from_generated_directory(tmp_path):
    assert run("generate", "--count", 4, "--out", tmp_path / "inst") == 0
    assert run("eval", "--policy", "greedy", "--instances", tmp_path / "inst", "--out", tmp_path / "ev") == 0
    assert len((tmp_path / "ev" / "eval_episodes.jsonl").read_text().splitlines()) == 4


def test_eval_usage_errors(tmp_path):
    assert run("eval", "--checkpoint", tmp_path / "missing.ckpt", "--out", tmp_path) == 2
    assert run("eval", "--policy", "clever", "--out", tmp_path) == 2
    assert run("eval", "--out", tmp_path) == 2
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"garbage")
    assert run("eval", "--checkpoint", bad, "--out", tmp_path) == 2


def test_verify_quick(capsys):
    assert run("verify", "--quick") == 0
    out = capsys.readouterr().out
    assert "5/5 checks passed" in out


def test_rollout_frames_and_trace(tmp_path):
    assert run("rollout", "--preset", "paper", "--policy", "greedy", "--instance-seed", 3, "--out", tmp_path) == 0
    trace = [json.loads(l) for l in (tmp_path / "trace.jsonl").read_text().splitlines()]
    frames = sorted(tmp_path.glob("frame_*.pgm"))
    assert len(frames) == len(trace) + 1
    assert trace[-1]["terminal"]
    for f in (frames[0], frames[-1]):
        assert read_pgm(f).shape == (38, 36)
    total = sum(r["reward"] for r in trace)
    from vrpssr.baselines import greedy_policy, run_episode
    from vrpssr.config import PAPER_INSTANCE as cfg
    from vrpssr.instance_gen import sample_instance
    assert total == run_episode(sample_instance(cfg, 3), greedy_policy, np.random.default_rng(0)).episode_return


def test_rollout_checkpoint(tmp_path):
    assert run("train", *TINY, "--set", "training.episodes=3", "--out", tmp_path / "t", "--print-every", 0) == 0
    assert run("rollout", *TINY, "--checkpoint", tmp_path / "t" / "latest.ckpt", "--out", tmp_path / "r") == 0
    assert (tmp_path / "r" / "frame_0000.pgm").exists()
    assert read_pgm(tmp_path / "r" / "frame_0000.pgm").shape == (10, 8)


def test_rollout_missing_checkpoint(tmp_path):
    assert run("rollout", "--checkpoint", tmp_path / "none.ckpt", "--out", tmp_path) == 2
