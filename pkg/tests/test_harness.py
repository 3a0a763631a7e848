import csv
import json
import os

import numpy as np
import pytest

from safelse.config import config_from_dict
from safelse.harness import (
    RunRecord,
    config_hash,
    emit_plot_data,
    overflow_table,
    precision_from_env,
    run_experiment,
)


def small_kl(tmp_path, **extra):
    raw = {"experiment": "dro-kl", "seed": 5, "repetitions": 2, "output_dir": str(tmp_path),
           "n": 200, "d": 3, "epochs": 2, "batch_size": 10, "stepsize": [1e-5, 1e-4],
           "mode": "safe"}
    raw.update(extra)
    return config_from_dict(raw)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestRuns:
    def test_record_layout(self, tmp_path):
        recs = run_experiment(small_kl(tmp_path))
        assert [r.run_id for r in recs] == [
            "dro-kl-p000-r000", "dro-kl-p000-r001", "dro-kl-p001-r000", "dro-kl-p001-r001"]
        assert [r.stream_id for r in recs] == [0, 1, 0, 1]
        assert all(not r.events for r in recs)
        assert recs[0].config_hash == recs[1].config_hash != recs[2].config_hash

    def test_repetitions_differ_and_replay(self, tmp_path):
        a = run_experiment(small_kl(tmp_path / "a"))
        b = run_experiment(small_kl(tmp_path / "b"))
        assert a[0].rows != a[1].rows
        assert [r.rows for r in a] == [r.rows for r in b]

    def test_summary_lines(self, tmp_path):
        run_experiment(small_kl(tmp_path))
        lines = (tmp_path / "summary.jsonl").read_text().splitlines()
        assert len(lines) == 4
        first = json.loads(lines[0])
        assert first["stream_id"] == 0 and first["seed"] == 5
        assert set(first["final"]) == {"L"} and first["events"] == 0

    def test_byte_identical_rerun(self, tmp_path):
        names = ("trajectories.csv", "events.csv", "summary.jsonl")
        run_experiment(small_kl(tmp_path / "a"), jobs=1)
        run_experiment(small_kl(tmp_path / "b"), jobs=2)
        for n in names:
            assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()

    def test_bad_cell_is_recorded(self, tmp_path):
        recs = run_experiment(small_kl(tmp_path, batch_size=500, stepsize=1e-5))
        assert all(r.unexpected_errors == 1 for r in recs)
        ev = read_csv(tmp_path / "events.csv")
        assert ev[0]["kind"] == "error" and "batch_size" in ev[0]["detail"]

    def test_bad_data_path_is_recorded(self, tmp_path):
        recs = run_experiment(small_kl(tmp_path, data_path=str(tmp_path / "missing.csv")))
        assert all(r.unexpected_errors == 1 for r in recs)

    def test_jobs_must_be_positive(self, tmp_path):
        with pytest.raises(ValueError):
            run_experiment(small_kl(tmp_path), jobs=0)


def test_bounds_experiment(tmp_path):
    cfg = config_from_dict({"experiment": "bounds", "scale": 0.02, "output_dir": str(tmp_path)})
    (rec,) = run_experiment(cfg)
    assert rec.violations == 0 and rec.unexpected_errors == 0
    rows = read_csv(tmp_path / "certificates.csv")
    assert len(rows) == 6 and all(r["violations"] == "0" for r in rows)


def test_cvar_experiment(tmp_path):
    cfg = config_from_dict({"experiment": "cvar", "scale": 0.05, "output_dir": str(tmp_path)})
    (rec,) = run_experiment(cfg)
    assert rec.violations == 0 and rec.certificates[0]["checks"] > 0


def test_eot_experiment_writes_gaps(tmp_path):
    cfg = config_from_dict({"experiment": "eot", "iters": 64, "test_size": 20,
                            "reference_runs": 1, "reference_iters": 200,
                            "output_dir": str(tmp_path)})
    (rec,) = run_experiment(cfg)
    rows = read_csv(tmp_path / "eot_gaps.csv")
    assert [int(r["iteration"]) for r in rows][:3] == [0, 1, 2]
    assert int(rows[-1]["iteration"]) == 64
    assert {r["mode"] for r in rows} == {"safe_semidual"}


class TestOverflow:
    def test_table(self):
        rows = overflow_table(0.01, 7.1, 0.1, 1.0, "double")
        by = {r["precision"]: r for r in rows}
        assert by["double"]["threshold"] == 7.0979
        assert by["single"]["threshold"] == 0.8873
        assert by["double"]["baseline_overflow"] is True
        assert by["double"]["safe_coefficient"] == pytest.approx(-9.0, abs=1e-9)
        assert by["single"]["baseline_overflow"] is None

    def test_below_threshold(self):
        (row,) = [r for r in overflow_table(0.01, 7.0, 0.1, 1.0, "double") if r["selected"]]
        assert row["baseline_overflow"] is False

    def test_single_precision(self):
        (row,) = [r for r in overflow_table(0.01, 1.0, 0.1, 1.0, "single") if r["selected"]]
        assert row["precision"] == "single" and row["baseline_overflow"] is True

    def test_experiment_files(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SAFELSE_PRECISION", "double")
        cfg = config_from_dict({"experiment": "overflow-demo", "output_dir": str(tmp_path)})
        (rec,) = run_experiment(cfg)
        assert [e[1] for e in rec.events] == ["overflow"]
        assert rec.unexpected_errors == 0
        rows = read_csv(tmp_path / "overflow_table.csv")
        assert [r["threshold"] for r in rows] == ["7.0979", "0.8873"]

    def test_precision_env(self, monkeypatch):
        monkeypatch.delenv("SAFELSE_PRECISION", raising=False)
        assert precision_from_env() == "double"
        monkeypatch.setenv("SAFELSE_PRECISION", " Single ")
        assert precision_from_env() == "single"
        monkeypatch.setenv("SAFELSE_PRECISION", "half")
        with pytest.raises(ValueError):
            precision_from_env()


def test_config_hash_ignores_key_order():
    a = config_hash("eot", 1, {"rho": 0.1, "C": 1.0})
    b = config_hash("eot", 1, {"C": 1.0, "rho": 0.1})
    assert a == b and len(a) == 64
    assert a != config_hash("eot", 2, {"rho": 0.1, "C": 1.0})


def record(rep, params, values):
    return RunRecord(f"r{rep}", "h", 0, rep, params, rows=[(i, "m", v) for i, v in enumerate(values)])


class TestPlotData:
    def test_constant_metric_zero_std(self, tmp_path):
        recs = [record(k, {"a": 1}, [2.0, 2.0]) for k in range(3)]
        long, agg = emit_plot_data(recs, "m", tmp_path / "plot.csv")
        assert agg.name == "plot_aggregate.csv"
        rows = read_csv(agg)
        assert [(float(r["mean"]), float(r["std_population"]), int(r["n"])) for r in rows] == [
            (2.0, 0.0, 3), (2.0, 0.0, 3)]
        assert len(read_csv(long)) == 6

    def test_population_std(self, tmp_path):
        recs = [record(0, {"a": 1}, [3.0]), record(1, {"a": 1}, [-3.0])]
        _, agg = emit_plot_data(recs, "m", tmp_path / "p.csv")
        (row,) = read_csv(agg)
        assert float(row["mean"]) == 0.0 and float(row["std_population"]) == 3.0

    def test_labels_use_varying_keys(self, tmp_path):
        recs = [record(0, {"a": 1, "b": 5}, [1.0]), record(1, {"a": 2, "b": 5}, [4.0])]
        _, agg = emit_plot_data(recs, "m", tmp_path / "p.csv")
        assert [r["label"] for r in read_csv(agg)] == ["a=1", "a=2"]

    def test_errors(self, tmp_path):
        with pytest.raises(ValueError):
            emit_plot_data([], "m", tmp_path / "p.csv")
        with pytest.raises(ValueError, match="available: m"):
            emit_plot_data([record(0, {}, [1.0])], "loss", tmp_path / "p.csv")


def test_metadata_written(tmp_path):
    run_experiment(small_kl(tmp_path, stepsize=1e-5, repetitions=1))
    meta = json.loads((tmp_path / "metadata.json").read_text())
    assert meta["config"]["experiment"] == "dro-kl"
    assert set(meta["wall_clock_seconds"]) == {"dro-kl-p000-r000"}
    assert np.isfinite(meta["finished_unix"]) and os.path.exists(tmp_path / "events.csv")
