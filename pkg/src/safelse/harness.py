"""Run orchestration and persistence.

``run_experiment`` expands the config grid, runs every (grid point,
repetition) cell and writes:

* ``trajectories.csv``: long format ``run_id, iteration, metric, value``;
* ``events.csv``: overflow, divergence and error events;
* ``summary.jsonl``: one line per run with final metrics and counts;
* ``certificates.csv`` (bounds, cvar) or ``overflow_table.csv``
  (overflow-demo) where relevant, and ``eot_gaps.csv`` for eOT runs;
* ``metadata.json``: wall-clock times and the resolved config.

Everything except ``metadata.json`` is a pure function of the config, so
reruns produce byte-identical files.  Repetition ``r`` draws from stream
``r`` of the config seed.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import platform
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import certify
from .config import ExperimentConfig, grid_points, serialize_config
from .corefn import FloatOverflowError
from .dro import (
    KlDroConfig,
    UotDroConfig,
    load_classification_csv,
    load_regression_csv,
    make_noisy_blobs,
    make_regression,
    run_kl_dro,
    run_uot_dro,
)
from .eot import (
    EotConfig,
    KernelExpansion,
    dual_exponent,
    make_fixture,
    overflow_threshold,
    run_eot,
    safe_semidual_sgd_step,
)
from .optim import RngStream, Trajectory

__all__ = [
    "RunRecord",
    "config_hash",
    "run_experiment",
    "emit_plot_data",
    "precision_from_env",
    "overflow_table",
    "EXPECTED_EVENTS",
]

EXPECTED_EVENTS = ("overflow", "divergence")


@dataclass
class RunRecord:
    run_id: str
    config_hash: str
    seed: int
    stream_id: int
    params: dict
    rows: list = field(default_factory=list)
    events: list = field(default_factory=list)
    final: dict = field(default_factory=dict)
    certificates: list = field(default_factory=list)
    table: list = field(default_factory=list)
    wall_clock: float = 0.0

    @property
    def violations(self) -> int:
        return sum(c["violations"] for c in self.certificates)

    @property
    def unexpected_errors(self) -> int:
        return sum(1 for e in self.events if e[1] not in EXPECTED_EVENTS)

    def label(self) -> str:
        return label_for(self.params)


def label_for(params: dict, keys=None) -> str:
    keys = sorted(params) if keys is None else keys
    return ",".join(f"{k}={params[k]}" for k in keys)


def config_hash(experiment: str, seed: int, params: dict) -> str:
    """SHA-256 of the canonical JSON form; independent of key order."""
    blob = json.dumps({"experiment": experiment, "seed": seed, "params": params},
                      sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def precision_from_env() -> str:
    value = os.environ.get("SAFELSE_PRECISION", "double").strip().lower()
    if value not in ("double", "single"):
        raise ValueError("SAFELSE_PRECISION must be 'double' or 'single'")
    return value


def _ceil4(x: float) -> float:
    return math.ceil(x * 1e4) / 1e4


def overflow_table(epsilon: float, z: float, rho: float, C: float, precision: str) -> list:
    """Overflow thresholds of ``exp(z / eps)`` for both precisions, and the
    outcome of the baseline exponent and the safe coefficient at ``z`` in the
    selected precision."""
    rows = []
    for prec in ("double", "single"):
        t = overflow_threshold(epsilon, prec)
        row = {
            "precision": prec,
            "epsilon": epsilon,
            "threshold": _ceil4(t),
            "threshold_exact": t,
            "z": z,
            "selected": prec == precision,
            "baseline_overflow": None,
            "safe_coefficient": None,
        }
        if prec == precision:
            try:
                dual_exponent(z, epsilon, prec)
                row["baseline_overflow"] = False
            except FloatOverflowError:
                row["baseline_overflow"] = True
            # v(y) - c(x, y) - alpha = z with a constant potential and zero cost
            v = KernelExpansion(1.0, offset=z)
            _, alpha = safe_semidual_sgd_step(
                v, 0.0, 0.0, 0.0, 1, EotConfig(epsilon=epsilon, rho=rho, C=C),
                cost=lambda x, y: 0.0,
            )
            row["safe_coefficient"] = -alpha
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# cells
# ---------------------------------------------------------------------------


def _traj_rows(traj: Trajectory):
    return [list(r) for r in traj.rows]


def _final_metrics(traj: Trajectory) -> dict:
    return {m: traj.last(m) for m in traj.metrics()}


def _cell(task):
    """Run one (grid point, repetition) cell.  Never raises."""
    experiment, seed, rep, params, shared = task
    rng = RngStream(seed, rep).generator()
    out = {"rows": [], "events": [], "final": {}, "certificates": [], "table": []}
    t0 = time.perf_counter()
    try:
        if experiment in ("bounds", "cvar"):
            run = certify.run_bound_suites if experiment == "bounds" else certify.run_cvar_suites
            for res in run(rng, scale=params["scale"]):
                out["certificates"].append({
                    "suite": res.name,
                    "checks": res.checks,
                    "violations": res.violations,
                    "worst": float(res.worst),
                })
        elif experiment == "dro-kl":
            data = shared["data"]
            if params["batch_size"] > data.n:
                raise ValueError("batch_size must not exceed the number of samples")
            cfg = KlDroConfig(params["lambda"], params["rho"], params["batch_size"],
                              params["stepsize"], params["momentum"], params["epochs"])
            traj = run_kl_dro(cfg, data, params["mode"], rng)
            out.update(rows=_traj_rows(traj), events=list(traj.events), final=_final_metrics(traj))
        elif experiment == "dro-uot":
            cfg = UotDroConfig(params["lambda"], params["beta"], params["rho"],
                               params["inner_iters"], params["inner_stepsize"],
                               params["cost_scale"], params["stepsize"], params["iters"],
                               params["eval_every"])
            traj = run_uot_dro(cfg, shared["data"], params["mode"], rng)
            out.update(rows=_traj_rows(traj), events=list(traj.events), final=_final_metrics(traj))
        elif experiment == "eot":
            cfg = EotConfig(params["epsilon"], params["rho"], params["C"], params["bandwidth"],
                            params["iters"], params["test_size"], params["divergence_factor"])
            traj = run_eot(cfg, params["mode"], rng, shared["fixture"])
            out.update(rows=_traj_rows(traj), events=list(traj.events), final=_final_metrics(traj))
        elif experiment == "overflow-demo":
            table = overflow_table(params["epsilon"], params["z"], params["rho"], params["C"],
                                   shared["precision"])
            out["table"] = table
            for row in table:
                if row["baseline_overflow"]:
                    out["events"].append((0, "overflow",
                                          f"{row['precision']} exp overflow at z={row['z']}"))
        else:
            raise ValueError(f"unknown experiment {experiment!r}")
    except Exception as exc:  # recorded, the harness continues
        detail = "".join(traceback.format_exception_only(type(exc), exc)).strip()
        out["events"].append((-1, "error", detail))
    out["wall_clock"] = time.perf_counter() - t0
    return out


def _shared_inputs(config: ExperimentConfig) -> dict:
    p = config.params
    if config.experiment == "dro-kl":
        if p["data_path"]:
            data = load_regression_csv(p["data_path"])
        else:
            data = make_regression(p["n"], p["d"], seed=p["data_seed"],
                                   feature_scale=p["feature_scale"], noise=p["noise"],
                                   outlier_frac=p["outlier_frac"])
        return {"data": data}
    if config.experiment == "dro-uot":
        paths = (p["train_path"], p["val_path"], p["test_path"])
        if any(paths):
            if not all(paths):
                raise ValueError("train_path, val_path and test_path must be given together")
            data = tuple(load_classification_csv(q) for q in paths)
        else:
            data = make_noisy_blobs(p["n_train"], p["n_val"], p["n_test"], seed=p["data_seed"],
                                    separation=p["separation"], noise_ratio=p["noise_ratio"])
        return {"data": data}
    if config.experiment == "eot":
        fx = make_fixture(p["test_size"], p["epsilon"], seed=p["fixture_seed"],
                          reference_runs=p["reference_runs"],
                          reference_iters=p["reference_iters"],
                          reference_C=p["reference_C"])
        return {"fixture": fx}
    if config.experiment == "overflow-demo":
        return {"precision": precision_from_env()}
    return {}


def run_experiment(config: ExperimentConfig, jobs: int = 1, write: bool = True) -> list:
    """Run every grid point and repetition; return the ``RunRecord`` list.

    Cells may run in parallel (``jobs > 1``); records come back in grid
    order and all files are written by this process only.
    """
    if jobs < 1:
        raise ValueError("jobs must be >= 1")
    points = grid_points(config)
    started = time.time()
    try:
        shared = _shared_inputs(config)
        setup_error = None
    except Exception as exc:
        shared = None
        setup_error = "".join(traceback.format_exception_only(type(exc), exc)).strip()

    tasks, meta = [], []
    for pi, params in enumerate(points):
        h = config_hash(config.experiment, config.seed, params)
        for rep in range(config.repetitions):
            run_id = f"{config.experiment}-p{pi:03d}-r{rep:03d}"
            meta.append((run_id, h, rep, params))
            tasks.append((config.experiment, config.seed, rep, params, shared))

    if setup_error is not None:
        results = [{"rows": [], "events": [(-1, "error", setup_error)], "final": {},
                    "certificates": [], "table": [], "wall_clock": 0.0} for _ in tasks]
    elif jobs == 1 or len(tasks) == 1:
        results = [_cell(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_cell, tasks))

    records = []
    for (run_id, h, rep, params), res in zip(meta, results):
        records.append(RunRecord(
            run_id=run_id, config_hash=h, seed=config.seed, stream_id=rep, params=params,
            rows=res["rows"], events=[tuple(e) for e in res["events"]], final=res["final"],
            certificates=res["certificates"], table=res["table"], wall_clock=res["wall_clock"],
        ))
    if write:
        _write_outputs(config, records, started)
    return records


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ""
    return str(v)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _json_safe(v):
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    if isinstance(v, np.generic):
        return _json_safe(v.item())
    return v


def _write_outputs(config: ExperimentConfig, records: list, started: float) -> None:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    traj_rows = [(r.run_id, it, m, v) for r in records for it, m, v in r.rows]
    (out / "trajectories.csv").write_text(
        _csv_text(["run_id", "iteration", "metric", "value"], traj_rows))
    ev_rows = [(r.run_id, it, kind, detail) for r in records for it, kind, detail in r.events]
    (out / "events.csv").write_text(_csv_text(["run_id", "iteration", "kind", "detail"], ev_rows))

    lines = []
    for r in records:
        lines.append(json.dumps(_json_safe({
            "run_id": r.run_id,
            "config_hash": r.config_hash,
            "seed": r.seed,
            "stream_id": r.stream_id,
            "params": r.params,
            "final": r.final,
            "events": len(r.events),
            "event_kinds": sorted({e[1] for e in r.events}),
            "certificate_checks": sum(c["checks"] for c in r.certificates),
            "certificate_violations": r.violations,
        }), sort_keys=True))
    (out / "summary.jsonl").write_text("".join(line + "\n" for line in lines))

    if config.experiment in ("bounds", "cvar"):
        rows = [(r.run_id, c["suite"], c["checks"], c["violations"], c["worst"])
                for r in records for c in r.certificates]
        (out / "certificates.csv").write_text(
            _csv_text(["run_id", "suite", "checks", "violations", "worst_margin"], rows))
    if config.experiment == "overflow-demo":
        cols = ["precision", "epsilon", "threshold", "threshold_exact", "z", "selected",
                "baseline_overflow", "safe_coefficient"]
        rows = [[r.run_id] + [row[c] for c in cols] for r in records for row in r.table]
        (out / "overflow_table.csv").write_text(_csv_text(["run_id"] + cols, rows))
    if config.experiment == "eot":
        rows = [(r.run_id, it, v, r.params["mode"], r.seed, r.params["rho"], r.params["C"],
                 r.params["bandwidth"])
                for r in records for it, m, v in r.rows if m == "gap"]
        (out / "eot_gaps.csv").write_text(_csv_text(
            ["run_id", "iteration", "gap", "mode", "seed", "rho", "C", "bandwidth"], rows))

    meta = {
        "started_unix": started,
        "finished_unix": time.time(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "config": json.loads(serialize_config(config)),
        "wall_clock_seconds": {r.run_id: r.wall_clock for r in records},
    }
    (out / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def emit_plot_data(records: list, metric: str, path) -> tuple:
    """Write plot-ready CSVs for one metric.

    ``path`` receives the long format ``iteration, value, run_id, label``;
    ``<stem>_aggregate<suffix>`` receives per-label, per-iteration mean and
    population standard deviation (divide by the number of runs).
    Returns both paths.
    """
    if not records:
        raise ValueError("no records to emit")
    available = sorted({m for r in records for _, m, _ in r.rows})
    if metric not in available:
        raise ValueError(f"metric {metric!r} not found; available: {', '.join(available) or 'none'}")
    grid_keys = sorted({k for r in records for k in r.params
                        if len({json.dumps(x.params.get(k)) for x in records}) > 1})
    long_rows, groups = [], {}
    for r in records:
        label = label_for(r.params, grid_keys)
        for it, m, v in r.rows:
            if m != metric:
                continue
            long_rows.append((it, v, r.run_id, label))
            groups.setdefault((label, it), []).append(v)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_csv_text(["iteration", "value", "run_id", "label"], long_rows))
    agg_rows = []
    for (label, it) in sorted(groups, key=lambda k: (k[0], k[1])):
        vals = np.asarray(groups[(label, it)], dtype=float)
        agg_rows.append((label, it, float(np.mean(vals)), float(np.std(vals)), vals.size))
    agg = path.with_name(path.stem + "_aggregate" + path.suffix)
    agg.write_text(_csv_text(["label", "iteration", "mean", "std_population", "n"], agg_rows))
    return path, agg
