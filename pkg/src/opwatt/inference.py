"""Live prediction for short adaptation epochs.

Interval models are trained on per-interval active seconds, but at run
time only a few seconds of segments are available. An
:class:`EpochMapper` holds, per operator, a least-squares line from the
mean active seconds per poll-sized segment to the total active seconds
over a discharge interval. :func:`predict_epoch` pushes the trailing
window through that map and then through the interval model.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .attribution import PowerEstimate
from .regress.linear import LinearModel
from .segmentation import DischargeInterval, ExecutionSegment, featurize, operator_schema, segment_level_means

log = logging.getLogger(__name__)

MIN_INTERVALS = 10
RELIABLE_R = 0.5


class UnknownOperatorError(KeyError):
    pass


@dataclass(frozen=True)
class OperatorMap:
    slope: float
    intercept: float
    r: float
    n: int
    # training range of the segment-level mean; inputs are clipped to it
    x_min: float = 0.0
    x_max: float = float("inf")

    @property
    def reliable(self) -> bool:
        return self.r >= RELIABLE_R

    def in_range(self, x: float) -> bool:
        return self.x_min <= x <= self.x_max

    def __call__(self, x: float) -> float:
        return self.slope * min(max(x, self.x_min), self.x_max) + self.intercept


@dataclass(frozen=True)
class EpochMapper:
    maps: dict[str, OperatorMap]
    poll_interval_ms: int = 1000
    excluded: tuple[str, ...] = ()
    notes: tuple[str, ...] = ()

    def r(self) -> dict[str, float]:
        return {k: m.r for k, m in self.maps.items()}


@dataclass(frozen=True)
class EpochPrediction:
    predicted_interval_s: float
    predicted_avg_power_w: float
    per_operator_power: dict[str, float]
    epoch_len_s: float
    window_means: dict[str, float] = field(default_factory=dict)
    features: dict[str, float] = field(default_factory=dict)
    low_confidence: bool = False


def fit_epoch_mapper(intervals: Sequence[DischargeInterval], schema: Sequence[str] | None = None) -> EpochMapper:
    """Per-operator line from segment-level mean to interval total.

    When the segment-level mean does not vary (an operator that is always
    on) the line is forced through the origin and ``r`` is set to 1, the
    relation being exactly proportional.
    """
    if len(intervals) < MIN_INTERVALS:
        raise ValueError(f"epoch mapper needs at least {MIN_INTERVALS} intervals, got {len(intervals)}")
    schema = list(schema) if schema is not None else operator_schema(intervals)
    poll = intervals[0].poll_interval_ms
    xs = np.array([[segment_level_means(iv, schema)[k] for k in schema] for iv in intervals])
    ys = np.array([[featurize(iv, schema).features[k] for k in schema] for iv in intervals])
    maps, excluded, notes = {}, [], []
    for j, k in enumerate(schema):
        x, y = xs[:, j], ys[:, j]
        if not np.any(x):
            excluded.append(k)
            notes.append(f"{k}: never active in the training intervals, excluded")
            continue
        if np.ptp(x) <= 1e-12 * max(abs(x).max(), 1.0):
            slope = float(np.dot(x, y) / np.dot(x, x))
            maps[k] = OperatorMap(slope, 0.0, 1.0, len(x), float(x.min()), float(x.max()))
            notes.append(f"{k}: constant segment-level mean, proportional fit")
            continue
        slope, intercept = np.polyfit(x, y, 1)
        r = float(np.corrcoef(x, y)[0, 1]) if np.ptp(y) > 0 else 0.0
        maps[k] = OperatorMap(float(slope), float(intercept), r, len(x), float(x.min()), float(x.max()))
        if r < RELIABLE_R:
            notes.append(f"{k}: r={r:.3f} below {RELIABLE_R}, unreliable")
    for note in notes:
        log.info(note)
    return EpochMapper(maps, poll, tuple(excluded), tuple(notes))


def window_means(window: Sequence[ExecutionSegment], poll_interval_ms: int) -> dict[str, float]:
    """Count-weighted mean active seconds per poll-sized segment."""
    span_ms = sum(s.end_ms - s.start_ms for s in window)
    if span_ms <= 0:
        raise ValueError("empty prediction window")
    slots = span_ms / poll_interval_ms
    out: dict[str, float] = {}
    for seg in window:
        for name, count in seg.active:
            out[name] = out.get(name, 0.0) + count * seg.duration_s
    return {k: v / slots for k, v in out.items()}


def predict_epoch(
    mapper: EpochMapper,
    interval_model,
    estimate: PowerEstimate | None,
    window: Sequence[ExecutionSegment],
    epoch_len_s: float = 10.0,
    e_per_percent: float | None = None,
) -> EpochPrediction:
    """Predicted interval duration and average power for the next epoch.

    Per-operator powers come from ``estimate`` and only for linear
    interval models; SVR models yield the average power alone. Window
    means outside the mapper's training range are clipped to it and the
    prediction is flagged low-confidence, since a linear map extrapolated
    far beyond its data can imply a negative interval.
    """
    if not window:
        raise ValueError("empty prediction window")
    schema = list(interval_model.schema)
    means = window_means(window, mapper.poll_interval_ms)
    feats = dict.fromkeys(schema, 0.0)
    low = False
    for k, x in means.items():
        if k not in feats:
            raise UnknownOperatorError(f"operator {k!r} is not in the model schema")
        if k not in mapper.maps:
            raise UnknownOperatorError(f"operator {k!r} has no epoch mapping")
        m = mapper.maps[k]
        feats[k] = max(0.0, m(x))
        low = low or not m.reliable or not m.in_range(x)
    X = np.array([[feats[k] for k in schema]])
    duration = float(interval_model.predict(X)[0])
    if not duration > 0:
        raise ValueError(f"non-positive predicted interval {duration!r} s")
    e = e_per_percent if e_per_percent is not None else (estimate.e_per_percent if estimate else None)
    if e is None:
        raise ValueError("e_per_percent is required without a power estimate")
    per_op = {}
    if isinstance(interval_model, LinearModel) and estimate is not None:
        per_op = {k: estimate.per_operator[k].absolute_power_w for k in schema if k in estimate.per_operator}
        low = low or estimate.low_confidence
    return EpochPrediction(duration, e / duration, per_op, float(epoch_len_s), means, feats, low)


def epoch_windows(segments: Sequence[ExecutionSegment], epoch_len_s: float) -> Iterator[tuple[int, list[ExecutionSegment]]]:
    """Consecutive ``epoch_len_s`` windows of segments, clipped at the edges.

    Yields ``(window_end_ms, segments)``; a trailing partial epoch is dropped.
    """
    if not segments:
        return
    step = int(round(epoch_len_s * 1000))
    if step <= 0:
        raise ValueError("epoch length must be positive")
    t = segments[0].start_ms
    end = segments[-1].end_ms
    i = 0
    while t + step <= end:
        hi = t + step
        win = []
        while i < len(segments) and segments[i].end_ms <= t:
            i += 1
        j = i
        while j < len(segments) and segments[j].start_ms < hi:
            s = segments[j]
            a, b = max(s.start_ms, t), min(s.end_ms, hi)
            if b > a:
                win.append(ExecutionSegment(a, b, s.active, s.imputed, 0))
            j += 1
        yield hi, win
        t = hi


def predictions_csv(rows: Sequence[tuple[float, EpochPrediction]], operators: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch_start_s", "predicted_interval_s", "avg_power_w", *[f"{k}_w" for k in operators]])
    for start_s, p in rows:
        w.writerow([repr(float(start_s)), repr(p.predicted_interval_s), repr(p.predicted_avg_power_w),
                    *[repr(p.per_operator_power[k]) for k in operators]])
    return buf.getvalue()


MAPPER_VERSION = 1


def save_mapper(mapper: EpochMapper) -> str:
    doc = {
        "format_version": MAPPER_VERSION,
        "poll_interval_ms": mapper.poll_interval_ms,
        "maps": {k: {"slope": m.slope, "intercept": m.intercept, "r": m.r, "n": m.n, "x_min": m.x_min, "x_max": m.x_max}
                 for k, m in mapper.maps.items()},
        "excluded": list(mapper.excluded),
        "notes": list(mapper.notes),
    }
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def load_mapper(text: str) -> EpochMapper:
    doc = json.loads(text)
    if doc.get("format_version") != MAPPER_VERSION:
        raise ValueError(f"unsupported mapper format_version {doc.get('format_version')!r}")
    maps = {k: OperatorMap(float(v["slope"]), float(v["intercept"]), float(v["r"]), int(v["n"]),
                           float(v["x_min"]), float(v["x_max"]))
            for k, v in doc["maps"].items()}
    return EpochMapper(maps, int(doc["poll_interval_ms"]), tuple(doc.get("excluded", ())), tuple(doc.get("notes", ())))
