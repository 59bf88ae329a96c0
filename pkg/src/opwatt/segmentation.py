"""Execution segments, discharge intervals and training samples.

A poll at time ``t`` labels the span ``[t - poll_interval, t]`` with the
operators it reported. Adjacent spans with the same composition merge
into an :class:`ExecutionSegment`; segments are split at every SoC event
so each one falls inside a single :class:`DischargeInterval`. Each
complete interval then becomes one :class:`IntervalSample`: per-operator
active seconds as features and the interval duration as the target.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .trace import IDLE, ActiveSet, SocRecord, TraceLog, format_number


@dataclass(frozen=True)
class ExecutionSegment:
    start_ms: int
    end_ms: int
    active: ActiveSet
    imputed: bool = False
    polls: int = 0

    @property
    def duration_s(self) -> float:
        return (self.end_ms - self.start_ms) / 1000.0


@dataclass(frozen=True)
class DischargeInterval:
    index: int
    start_ms: int
    end_ms: int
    segments: tuple[ExecutionSegment, ...]
    poll_count: int
    poll_interval_ms: int = 1000

    @property
    def duration_s(self) -> float:
        return (self.end_ms - self.start_ms) / 1000.0

    def operator_types(self) -> set[str]:
        names = set()
        for seg in self.segments:
            names.update(seg.active.types())
        return names


@dataclass(frozen=True)
class IntervalSample:
    features: dict[str, float]
    target_s: float
    interval_ref: int

    def vector(self, schema: Sequence[str]) -> np.ndarray:
        return np.array([self.features.get(k, 0.0) for k in schema], dtype=float)


def build_segments(log: TraceLog) -> list[ExecutionSegment]:
    """Partition the polled time range into constant-composition segments."""
    if not log.polls:
        return []
    step = log.poll_interval
    cuts = [s.t for s in log.soc_events]
    pieces: list[ExecutionSegment] = []
    prev_end = None
    for poll in log.polls:
        start = poll.t - step
        if prev_end is not None and start > prev_end:
            pieces.extend(_split(prev_end, start, IDLE, True, 0, cuts))
        if prev_end is not None and start < prev_end:
            start = prev_end
        pieces.extend(_split(max(start, 0), poll.t, poll.active, False, 1, cuts))
        prev_end = poll.t
    return _merge(pieces, cuts)


def _split(start, end, active, imputed, polls, cuts) -> list[ExecutionSegment]:
    lo = np.searchsorted(cuts, start, side="right")
    hi = np.searchsorted(cuts, end, side="left")
    bounds = [start, *cuts[lo:hi], end]
    out = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        if b > a:
            # the poll instant sits at the end of the span
            out.append(ExecutionSegment(a, b, active, imputed, polls if b == end else 0))
    return out


def _merge(pieces: list[ExecutionSegment], cuts) -> list[ExecutionSegment]:
    cutset = set(cuts)
    merged: list[ExecutionSegment] = []
    for seg in pieces:
        if merged:
            last = merged[-1]
            if (
                last.end_ms == seg.start_ms
                and last.active == seg.active
                and last.imputed == seg.imputed
                and seg.start_ms not in cutset
            ):
                merged[-1] = ExecutionSegment(
                    last.start_ms, seg.end_ms, last.active, last.imputed, last.polls + seg.polls
                )
                continue
        merged.append(seg)
    return merged


def build_intervals(
    segments: Sequence[ExecutionSegment],
    soc_events: Sequence[SocRecord],
    poll_interval_ms: int = 1000,
    first_index: int = 0,
) -> list[DischargeInterval]:
    """Group segments between consecutive SoC events.

    Time before the first SoC event and after the last one is discarded,
    as is any interval the segments do not fully cover.
    """
    if len(soc_events) < 2 or not segments:
        return []
    starts = np.array([s.start_ms for s in segments])
    cover_lo, cover_hi = segments[0].start_ms, segments[-1].end_ms
    out = []
    for a, b in zip(soc_events[:-1], soc_events[1:]):
        if a.t < cover_lo or b.t > cover_hi:
            continue
        lo = int(np.searchsorted(starts, a.t, side="left"))
        hi = int(np.searchsorted(starts, b.t, side="left"))
        segs = tuple(segments[lo:hi])
        polls = sum(s.polls for s in segs)
        out.append(DischargeInterval(first_index + len(out), a.t, b.t, segs, polls, poll_interval_ms))
    return out


def operator_schema(intervals: Iterable[DischargeInterval], expand_counts: bool = False) -> list[str]:
    names = set()
    for iv in intervals:
        for seg in iv.segments:
            if expand_counts:
                names.update(f"{n}#{c}" for n, c in seg.active)
            else:
                names.update(seg.active.types())
    return sorted(names)


def featurize(
    interval: DischargeInterval, schema: Sequence[str], expand_counts: bool = False
) -> IntervalSample:
    """Turn an interval into one training row.

    By default ``feature[k]`` is count-weighted active seconds of type
    ``k``. With ``expand_counts`` there is one feature per
    ``type#count`` pair holding the unweighted seconds at that count.
    """
    known = set(schema)
    feats = dict.fromkeys(schema, 0.0)
    for seg in interval.segments:
        dur = seg.duration_s
        for name, count in seg.active:
            key = f"{name}#{count}" if expand_counts else name
            if key not in known:
                raise KeyError(f"operator {key!r} in interval {interval.index} is not in the schema")
            feats[key] += dur if expand_counts else count * dur
    return IntervalSample(feats, interval.duration_s, interval.index)


def segment_level_means(interval: DischargeInterval, schema: Sequence[str]) -> dict[str, float]:
    """Mean active seconds per poll-sized segment for each operator type."""
    n_slots = interval.duration_s * 1000.0 / interval.poll_interval_ms
    feats = featurize(interval, schema).features
    return {k: v / n_slots for k, v in feats.items()}


def trace_intervals(log: TraceLog, first_index: int = 0) -> list[DischargeInterval]:
    return build_intervals(build_segments(log), log.soc_events, log.poll_interval, first_index)


def dataset_from_traces(
    logs: Sequence[TraceLog], schema: Sequence[str] | None = None, expand_counts: bool = False
) -> tuple[list[DischargeInterval], list[IntervalSample], list[str]]:
    """Intervals and samples for several traces, numbered consecutively."""
    intervals: list[DischargeInterval] = []
    for log in logs:
        intervals.extend(trace_intervals(log, first_index=len(intervals)))
    if schema is None:
        schema = operator_schema(intervals, expand_counts)
    samples = [featurize(iv, schema, expand_counts) for iv in intervals]
    return intervals, samples, list(schema)


def design_matrix(samples: Sequence[IntervalSample], schema: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    X = np.array([[s.features.get(k, 0.0) for k in schema] for s in samples], dtype=float)
    y = np.array([s.target_s for s in samples], dtype=float)
    return X.reshape(len(samples), len(schema)), y


def write_samples_csv(samples: Sequence[IntervalSample], schema: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["interval", "target_s", *schema])
    for s in samples:
        w.writerow([s.interval_ref, repr(float(s.target_s)), *(repr(float(s.features.get(k, 0.0))) for k in schema)])
    return buf.getvalue()


def read_samples_csv(text: str) -> tuple[list[IntervalSample], list[str]]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][:2] != ["interval", "target_s"]:
        raise ValueError("samples CSV must start with header 'interval,target_s,...'")
    schema = rows[0][2:]
    samples = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(schema) + 2:
            raise ValueError(f"line {lineno}: expected {len(schema) + 2} columns")
        feats = {k: float(v) for k, v in zip(schema, row[2:])}
        samples.append(IntervalSample(feats, float(row[1]), int(row[0])))
    return samples, schema
