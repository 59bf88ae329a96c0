"""Linear-vs-SVR gain sweeps on simulated two-state workloads.

Each cell simulates a two-state operator, runs the full training path
(segmentation, preprocessing, nested CV) and records the gain
``(rmse_linear - rmse_svr) / rmse_linear``. Cells are replicated over
seeds and every replication is an independent task.
"""

from __future__ import annotations

import csv
import io
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config import RunConfig
from .preprocess import preprocess_pipeline
from .regress.cv import nested_cv, select_model
from .segmentation import dataset_from_traces
from .simulator import simulate_runs, two_state_operator

log = logging.getLogger(__name__)

KINDS = ("power-ratio", "train-size")


@dataclass(frozen=True)
class Replication:
    axis_value: float
    seed: int
    n_samples: int
    linear_rmse_s: float
    svr_rmse_s: float

    @property
    def gain(self) -> float:
        return (self.linear_rmse_s - self.svr_rmse_s) / self.linear_rmse_s if self.linear_rmse_s > 0 else 0.0


@dataclass
class ExperimentResult:
    kind: str
    axis: str
    values: list[float]
    seeds: list[int]
    replications: list[Replication] = field(default_factory=list)

    def cell(self, value: float) -> list[Replication]:
        return [r for r in self.replications if r.axis_value == value]

    def mean_gain(self, value: float) -> float:
        return float(np.mean([r.gain for r in self.cell(value)]))

    def gains(self) -> list[float]:
        return [self.mean_gain(v) for v in self.values]

    def summary_rows(self) -> list[dict]:
        rows = []
        for v in self.values:
            reps = self.cell(v)
            g = np.array([r.gain for r in reps])
            rows.append({
                self.axis: v,
                "replications": len(reps),
                "linear_rmse_s": float(np.mean([r.linear_rmse_s for r in reps])),
                "svr_rmse_s": float(np.mean([r.svr_rmse_s for r in reps])),
                "gain_pct": 100.0 * float(g.mean()),
                "gain_std_pct": 100.0 * float(g.std(ddof=1)) if len(g) > 1 else 0.0,
            })
        return rows


def trend_ok(values: Sequence[float], max_inversions: int = 1, tolerance: float = 0.02) -> bool:
    """Non-decreasing, except for at most ``max_inversions`` drops of at most ``tolerance``."""
    drops = [a - b for a, b in zip(values[:-1], values[1:]) if b < a]
    return len(drops) <= max_inversions and all(d <= tolerance for d in drops)


def run_cell(cfg: RunConfig, ratio: float, n: int, seed: int, axis_value: float) -> Replication:
    op = two_state_operator(ratio, cfg.experiment.prob_high)
    runs = simulate_runs([op], cfg.battery_spec(), cfg.noise_spec(seed), n, cfg.poll_interval_ms, label="experiment")
    intervals, samples, schema = dataset_from_traces([r[0] for r in runs])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if cfg.preprocess.enabled:
            samples, _ = preprocess_pipeline(intervals, samples, cfg.preprocess.to_config(), schema)
        report = nested_cv(samples, grid={"svr": cfg.svr_grid()}, outer=cfg.cv.outer, inner=cfg.cv.inner,
                           seed=seed, schema=schema, refit=False)
    sel = select_model(report)
    log.debug("cell %s=%s seed=%d gain=%.3f", "value", axis_value, seed, sel.gain)
    return Replication(axis_value, seed, len(samples), report.mean_rmse("linear"), report.mean_rmse("svr"))


def _task(args):
    return run_cell(*args)


def experiment_seeds(cfg: RunConfig) -> list[int]:
    return [cfg.seed + i for i in range(cfg.experiment.replications)]


def run_experiment(kind: str, cfg: RunConfig) -> ExperimentResult:
    if kind not in KINDS:
        raise ValueError(f"unknown experiment kind {kind!r}; expected one of {KINDS}")
    ex = cfg.experiment
    seeds = experiment_seeds(cfg)
    if kind == "power-ratio":
        values = [float(r) for r in ex.ratios]
        tasks = [(cfg, r, ex.n, s, r) for r in values for s in seeds]
        axis = "ratio"
    else:
        values = [float(n) for n in ex.sizes]
        tasks = [(cfg, ex.ratio, int(n), s, n) for n in values for s in seeds]
        axis = "n"
    if ex.n_jobs > 1:
        with ProcessPoolExecutor(max_workers=ex.n_jobs) as pool:
            reps = list(pool.map(_task, tasks))
    else:
        reps = [_task(t) for t in tasks]
    return ExperimentResult(kind, axis, values, seeds, reps)


def replications_csv(result: ExperimentResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([result.axis, "seed", "n_samples", "linear_rmse_s", "svr_rmse_s", "gain_pct"])
    for r in result.replications:
        w.writerow([repr(r.axis_value), r.seed, r.n_samples, repr(r.linear_rmse_s), repr(r.svr_rmse_s),
                    repr(100.0 * r.gain)])
    return buf.getvalue()


def summary_csv(result: ExperimentResult) -> str:
    rows = result.summary_rows()
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()
