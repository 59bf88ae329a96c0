"""Noise filters applied to discharge intervals before training.

Three stages run in order:

1. :func:`filter_poll_count` drops intervals whose observed poll count
   strays from the expected count (lost polls mean unreliable segments);
2. :func:`bucket_filter` groups intervals with similar operator activity
   and drops targets more than ``k_sigma`` standard deviations from their
   bucket mean;
3. :func:`cooks_filter` fits OLS once and drops high-influence samples by
   Cook's distance.

Filters only ever drop samples. Every removal is recorded in a
:class:`FilterReport`.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .segmentation import DischargeInterval, IntervalSample, design_matrix

log = logging.getLogger(__name__)


class InsufficientSamplesError(ValueError):
    pass


@dataclass(frozen=True)
class Removal:
    interval: int
    rule: str
    detail: str = ""


@dataclass
class FilterReport:
    stage: str
    input_count: int
    kept_count: int
    removals: list[Removal] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.kept_count + len(self.removals) != self.input_count:
            raise ValueError(f"{self.stage}: kept + removed != input")

    def removed_indices(self) -> set[int]:
        return {r.interval for r in self.removals}


@dataclass
class PipelineReport:
    stages: list[FilterReport] = field(default_factory=list)

    @property
    def input_count(self) -> int:
        return self.stages[0].input_count if self.stages else 0

    @property
    def kept_count(self) -> int:
        return self.stages[-1].kept_count if self.stages else 0

    @property
    def removals(self) -> list[Removal]:
        return [r for s in self.stages for r in s.removals]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["stage", "interval", "rule", "detail"])
        for st in self.stages:
            for r in st.removals:
                w.writerow([st.stage, r.interval, r.rule, r.detail])
        return buf.getvalue()


@dataclass(frozen=True)
class PreprocessConfig:
    poll_threshold: float = 0.10
    bucket_width_s: float = 10.0
    k_sigma: float = 2.0
    min_bucket: int = 3
    cooks_rule: str = "4/n"
    cooks_resid_gate: float = 3.0
    bucket_detrend: bool = True
    # residual std below this is treated as exact fit (timestamps are ms-quantized)
    resid_floor_s: float = 0.01
    max_rounds: int = 50


def filter_poll_count(
    intervals: Sequence[DischargeInterval], threshold: float = 0.10
) -> tuple[list[DischargeInterval], FilterReport]:
    """Keep intervals whose poll count is within ``threshold`` of expected."""
    kept, removals = [], []
    for iv in intervals:
        expected = math.floor((iv.end_ms - iv.start_ms) / iv.poll_interval_ms)
        if expected == 0:
            removals.append(Removal(iv.index, "too-short", f"duration {iv.duration_s:g}s < one poll"))
            continue
        dev = abs(iv.poll_count - expected) / expected
        if dev > threshold:
            removals.append(
                Removal(iv.index, "poll-count", f"{iv.poll_count} polls vs {expected} expected ({dev:.1%})")
            )
        else:
            kept.append(iv)
    return kept, FilterReport("poll-count", len(intervals), len(kept), removals)


def bucket_key(sample: IntervalSample, schema: Sequence[str], width: float) -> tuple[int, ...]:
    return tuple(int(math.floor(sample.features.get(k, 0.0) / width)) for k in schema)


def _ols_residuals(X: np.ndarray, y: np.ndarray) -> np.ndarray | None:
    A = np.column_stack([np.ones(len(y)), X])
    if len(y) <= A.shape[1]:
        return None
    beta, *_ = np.linalg.lstsq(A, y, rcond=None)
    return y - A @ beta


def bucket_filter(
    samples: Sequence[IntervalSample],
    bucket_width_s: float = 10.0,
    k_sigma: float = 2.0,
    min_bucket: int = 3,
    schema: Sequence[str] | None = None,
    detrend: bool = True,
    std_floor_s: float = 0.0,
) -> tuple[list[IntervalSample], FilterReport]:
    """Drop intervals far from the typical duration of their activity bucket.

    Samples are bucketed by their feature vector rounded down to multiples
    of ``bucket_width_s``. With ``detrend`` the compared value is the
    target minus a global least-squares trend, so the spread of operator
    time inside one bucket is not mistaken for noise. Within each bucket
    of at least ``min_bucket`` samples, values further than ``k_sigma``
    sample standard deviations from the bucket mean are dropped.
    Zero-variance buckets pass untouched.
    """
    if schema is None:
        schema = sorted({k for s in samples for k in s.features})
    values = np.array([s.target_s for s in samples], dtype=float)
    if detrend and samples:
        resid = _ols_residuals(*design_matrix(samples, schema))
        if resid is not None:
            values = resid
    buckets: dict[tuple[int, ...], list[int]] = defaultdict(list)
    for i, s in enumerate(samples):
        buckets[bucket_key(s, schema, bucket_width_s)].append(i)
    drop: dict[int, str] = {}
    for key, members in buckets.items():
        if len(members) < min_bucket:
            continue
        v = values[members]
        mu, sd = float(v.mean()), float(v.std(ddof=1))
        if sd == 0.0:
            continue
        sd = max(sd, std_floor_s)
        for i, vi in zip(members, v):
            z = abs(vi - mu) / sd
            if z > k_sigma:
                drop[i] = f"bucket {key}: {z:.2f} sd from bucket mean (target {samples[i].target_s:.3f}s)"
    kept = [s for i, s in enumerate(samples) if i not in drop]
    removals = [Removal(samples[i].interval_ref, "bucket-sigma", d) for i, d in sorted(drop.items())]
    return kept, FilterReport("bucket", len(samples), len(kept), removals)


def _cooks_threshold(rule: str, n: int) -> float:
    if rule == "4/n":
        return 4.0 / n
    if rule == "1":
        return 1.0
    raise ValueError(f"unknown Cook's threshold rule {rule!r}")


def cooks_distance(
    X: np.ndarray, y: np.ndarray, resid_floor: float = 0.0
) -> tuple[np.ndarray, np.ndarray, bool]:
    """Cook's distance of each row for an OLS fit with intercept.

    Returns ``(distances, studentized_residuals, ridge_used)``. A
    rank-deficient design is stabilized with a tiny ridge term.
    """
    n = X.shape[0]
    A = np.column_stack([np.ones(n), X])
    p = A.shape[1]
    if n <= p:
        raise InsufficientSamplesError(f"insufficient samples: n={n} needs more than {p}")
    G = A.T @ A
    ridge = np.linalg.matrix_rank(A) < p
    if ridge:
        G = G + 1e-8 * np.mean(np.diag(G)) * np.eye(p)
    Ginv = np.linalg.pinv(G) if ridge else np.linalg.inv(G)
    beta = Ginv @ (A.T @ y)
    resid = y - A @ beta
    h = np.einsum("ij,jk,ik->i", A, Ginv, A)
    s2 = float(resid @ resid) / (n - p)
    s2 = max(s2, resid_floor**2)
    if s2 == 0.0:
        return np.zeros(n), np.zeros(n), ridge
    with np.errstate(divide="ignore", invalid="ignore"):
        d = resid**2 / (p * s2) * h / (1.0 - h) ** 2
        r = resid / np.sqrt(s2 * (1.0 - h))
    d = np.where(np.isfinite(d), d, np.inf)
    r = np.where(np.isfinite(r), r, np.inf)
    return d, r, ridge


def cooks_filter(
    samples: Sequence[IntervalSample],
    threshold_rule: str = "4/n",
    schema: Sequence[str] | None = None,
    resid_floor_s: float = 0.0,
    resid_gate: float = 0.0,
) -> tuple[list[IntervalSample], FilterReport]:
    """Single-pass Cook's distance filter (no refit-and-repeat).

    A sample is dropped when its Cook's distance exceeds the threshold
    and, if ``resid_gate`` is positive, its studentized residual also
    exceeds ``resid_gate`` in magnitude. The gate keeps high-leverage
    points that the model still fits well.
    """
    if schema is None:
        schema = sorted({k for s in samples for k in s.features})
    n = len(samples)
    if n <= len(schema) + 1:
        raise InsufficientSamplesError(f"insufficient samples: n={n} with {len(schema)} features")
    X, y = design_matrix(samples, schema)
    d, r, ridge = cooks_distance(X, y, resid_floor_s)
    cut = _cooks_threshold(threshold_rule, n)
    kept, removals = [], []
    for s, di, ri in zip(samples, d, r):
        if di > cut and abs(ri) > resid_gate:
            removals.append(Removal(s.interval_ref, "cooks-distance", f"D={di:.4g} > {cut:.4g}, r={ri:.3g}"))
        else:
            kept.append(s)
    report = FilterReport("cooks", n, len(kept), removals)
    if ridge:
        report.flags.append("rank-deficient design: ridge-stabilized fit")
    return kept, report


def preprocess_pipeline(
    intervals: Sequence[DischargeInterval],
    samples: Sequence[IntervalSample],
    config: PreprocessConfig | None = None,
    schema: Sequence[str] | None = None,
) -> tuple[list[IntervalSample], PipelineReport]:
    """Poll-count, bucket and Cook's filters in that order.

    The three stages are repeated until a round removes nothing, so the
    result is a fixed point: running the pipeline on its own output
    removes nothing.
    """
    cfg = config or PreprocessConfig()
    if schema is None:
        schema = sorted({k for s in samples for k in s.features})
    report = PipelineReport()
    by_ref = {iv.index: iv for iv in intervals}
    current = list(samples)
    for _ in range(cfg.max_rounds):
        before = len(current)
        ivs = [by_ref[s.interval_ref] for s in current if s.interval_ref in by_ref]
        kept_iv, rep = filter_poll_count(ivs, cfg.poll_threshold)
        keep_refs = {iv.index for iv in kept_iv}
        # samples without a known interval cannot be poll-checked and pass through
        unknown = [s for s in current if s.interval_ref not in by_ref]
        current = [s for s in current if s.interval_ref in keep_refs] + unknown
        current.sort(key=lambda s: s.interval_ref)
        rep = FilterReport(rep.stage, rep.input_count + len(unknown), rep.kept_count + len(unknown), rep.removals)
        report.stages.append(rep)
        current, rep = bucket_filter(
            current, cfg.bucket_width_s, cfg.k_sigma, cfg.min_bucket, schema, cfg.bucket_detrend, cfg.resid_floor_s
        )
        report.stages.append(rep)
        current, rep = cooks_filter(current, cfg.cooks_rule, schema, cfg.resid_floor_s, cfg.cooks_resid_gate)
        report.stages.append(rep)
        if len(current) == before:
            break
    else:
        log.warning("preprocess did not reach a fixed point in %d rounds", cfg.max_rounds)
    return current, report
