import math

import numpy as np
import pytest

from bpttfield import harness
from bpttfield.errors import ConfigError, RunAborted
from bpttfield.harness import EpochRecord, RunResult, SweepEntry
from bpttfield.tasks import TrainConfig, build_problem, run_seeds

SMALL_CP = TrainConfig(task="cartpole", dataset=8, batch_size=4, epochs=2, n_steps=10, hidden=(8,))


def test_single_step_single_record():
    r = harness.train_run(SMALL_CP.with_updates(epochs=1, batch_size=8))
    assert len(r.records) == 1 and len(r.update_norms) == 1


def test_steps_per_epoch():
    r = harness.train_run(SMALL_CP.with_updates(epochs=3, batch_size=2))
    assert len(r.records) == 3 and len(r.update_norms) == 12
    assert [rec.epoch for rec in r.records] == [1, 2, 3]


def test_run_files(tmp_path):
    r = harness.train_run(SMALL_CP, tmp_path / "run")
    lines = (tmp_path / "run" / "epochs.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,test_loss,update_norm_log10_mean,update_norm_max,seconds"
    assert len(lines) == 3
    first = lines[1].split(",")
    assert float(first[2]) == r.records[0].test_loss
    cfg = dict(line.split("=", 1) for line in (tmp_path / "run" / "config.txt").read_text().splitlines())
    assert cfg["task"] == "cartpole" and cfg["dataset"] == "8" and cfg["hidden"] == "8"
    raw = (tmp_path / "run" / "final_params.bin").read_bytes()
    assert int.from_bytes(raw[:8], "little") == r.params.size
    np.testing.assert_array_equal(harness.read_params(tmp_path / "run" / "final_params.bin"), r.params)


def test_identical_configs_identical_bytes(tmp_path):
    cfg = SMALL_CP.with_updates(task="quantum", grid=16, n_steps=6, hidden=None, features=4)
    harness.train_run(cfg, tmp_path / "a")
    harness.train_run(cfg, tmp_path / "b")
    for name in ("epochs.csv", "final_params.bin", "config.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_wallclock_column_opt_in(tmp_path):
    harness.train_run(SMALL_CP.with_updates(wallclock=True), tmp_path / "w")
    rows = (tmp_path / "w" / "epochs.csv").read_text().splitlines()[1:]
    assert all(float(r.split(",")[-1]) > 0 for r in rows)
    timing = (tmp_path / "w" / "timing.csv").read_text().splitlines()
    assert timing[0] == "epoch,seconds" and len(timing) == 3


def test_test_loss_uses_final_params():
    r = harness.train_run(SMALL_CP)
    problem = build_problem(SMALL_CP)
    test = problem.sample(run_seeds(SMALL_CP.seed)[2], 8)
    assert r.records[-1].test_loss == harness.evaluate(problem, r.params, test)


def test_train_and_test_sets_differ():
    problem = build_problem(SMALL_CP)
    _, tr, te, _ = run_seeds(0)
    assert not np.array_equal(problem.sample(tr, 8), problem.sample(te, 8))


def test_update_norm_telemetry():
    r = harness.train_run(SMALL_CP.with_updates(epochs=1, batch_size=2))
    rec = r.records[0]
    assert rec.update_norm_max == max(r.update_norms)
    assert rec.update_norm_log10_mean == pytest.approx(np.mean(np.log10(r.update_norms)))


def test_divergent_run_aborts_with_partial_records():
    cfg = TrainConfig(task="toy", method="R", optimizer="sgd", lr=1e3, epochs=50)
    r = harness.train_run(cfg)
    assert r.aborted and 1 <= len(r.records) < 50
    assert not math.isfinite(r.records[-1].test_loss)
    with pytest.raises(RunAborted) as info:
        harness.train_run(cfg, raise_on_abort=True)
    assert len(info.value.records) == len(r.records)


def test_invalid_config():
    with pytest.raises(ConfigError) as info:
        harness.train_run(SMALL_CP.with_updates(batch_size=3))
    assert info.value.key == "batch_size"
    with pytest.raises(ConfigError):
        harness.train_run(SMALL_CP.with_updates(epochs=0))


@pytest.mark.xfail(strict=True, reason="nearest zero-loss point lies ~3.2 from the origin; "
                   "200 Adam steps at lr 0.01 move each coordinate at most ~2 (see decisions ledger)")
def test_toy_modified_reaches_minimum_in_200_epochs():
    r = harness.train_run(TrainConfig(task="toy", method="M", lr=0.01, epochs=200))
    assert r.records[-1].train_loss < 1e-3


def test_toy_modified_converges_given_more_steps():
    r = harness.train_run(TrainConfig(task="toy", method="M", lr=0.01, epochs=2600))
    assert r.records[-1].train_loss < 1e-3


# -- sweeps -------------------------------------------------------------------

def test_sweep_product_and_seeds(tmp_path):
    base = TrainConfig(task="toy", epochs=2)
    entries = harness.sweep(base, {"lr": [1e-3], "method": ["R", "M", "C", "S"]}, tmp_path)
    assert len(entries) == 4 and not any(e.failed for e in entries)
    assert len({e.config.seed for e in entries}) == 4
    assert sorted(p.name for p in tmp_path.iterdir() if p.is_dir()) == sorted(e.name for e in entries)
    again = harness.sweep_configs(base, {"lr": [1e-3], "method": ["R", "M", "C", "S"]})
    assert [c.seed for _, c in again] == [e.config.seed for e in entries]
    header = (tmp_path / "summary.csv").read_text().splitlines()[0]
    assert "runs_below_0.001" in header


def test_sweep_rejects_empty_axes():
    with pytest.raises(ConfigError):
        harness.sweep(TrainConfig(task="toy"), {})
    with pytest.raises(ConfigError):
        harness.sweep(TrainConfig(task="toy"), {"lr": []})


def test_sweep_validates_every_config_before_running():
    with pytest.raises(ConfigError) as info:
        harness.sweep(TrainConfig(task="toy", epochs=1), {"method": ["R", "X"]})
    assert info.value.key == "method"


def test_failed_run_does_not_stop_sweep(monkeypatch):
    calls = []

    def flaky(cfg, out_dir=None):
        calls.append(cfg.lr)
        if cfg.lr == 0.5:
            raise RuntimeError("boom")
        return RunResult(cfg, [EpochRecord(1, 1.0, cfg.lr, 0.0, 1.0, 0.0)])

    monkeypatch.setattr(harness, "train_run", flaky)
    entries = harness.sweep(TrainConfig(task="toy"), {"lr": [0.1, 0.5, 0.2]})
    assert calls == [0.1, 0.5, 0.2]
    assert [e.failed for e in entries] == [False, True, False]
    assert "boom" in entries[1].error and entries[1].final_test_loss == math.inf


def test_parallel_sweep_matches_serial(tmp_path):
    base = TrainConfig(task="toy", epochs=3)
    axes = {"method": ["R", "M"]}
    harness.sweep(base, axes, tmp_path / "s", threads=1)
    harness.sweep(base, axes, tmp_path / "p", threads=2)
    for name in ("method-R", "method-M"):
        assert (tmp_path / "s" / name / "epochs.csv").read_bytes() == (tmp_path / "p" / name / "epochs.csv").read_bytes()


# -- summaries ----------------------------------------------------------------

def fake(method, loss):
    cfg = TrainConfig(task="toy", method=method)
    return SweepEntry("x", cfg, RunResult(cfg, [EpochRecord(1, loss, loss, 0.0, 0.0, 0.0)]))


def test_summary_single_result():
    rows = harness.summarize([fake("C", 0.5)], (0.8,))
    assert rows[0]["runs_below_0.8"] == 1 and rows[0]["total_runs"] == 1


def test_summary_counts_and_small_k():
    rows = harness.summarize([fake("M", v) for v in (0.4, 0.6, 0.9)], (0.5, 0.8))
    row = rows[0]
    assert row["runs_below_0.5"] == 1 and row["runs_below_0.8"] == 2
    assert row["best"] == 0.4
    assert row["mean_best_5"] == pytest.approx(np.mean([0.4, 0.6, 0.9]))
    assert row["mean_best_25"] == row["mean_best_5"]


def test_summary_groups_and_table_rows():
    rows = harness.summarize([fake(m, v) for m, v in (("R", 0.3), ("M", 0.2), ("R", 0.1))], (0.25,))
    by = {r["method"]: r for r in rows}
    assert by["R"]["best"] == 0.1 and by["R"]["total_runs"] == 2 and by["M"]["runs_below_0.25"] == 1
    assert list(by["R"]) == ["method", "best", "mean_best_5", "mean_best_25", "runs_below_0.25", "total_runs"]
    with pytest.raises(ConfigError):
        harness.summarize([])
