"""Trace domain types and the line-oriented trace file format.

A trace interleaves two record streams sampled on the device:

* ``POLL`` records, one per polling interval, carrying the multiset of
  operators that were active during the interval that just ended;
* ``SOC`` records, emitted whenever the battery state-of-charge drops by
  one percent.

Everything downstream (segmentation, training, inference) consumes only
:class:`TraceLog`, so the simulator and a real device client are
interchangeable as long as they write this format::

    HDR v=1 poll_ms=1000 e1pct_j=100 label=pixel5
    POLL 1000 NQ:2
    POLL 2000 -
    SOC 2500 99
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, TextIO

FORMAT_VERSION = 1
IDLE_TOKEN = "-"

_TYPE_RE = re.compile(r"^[^\s,:]+$")


class TraceFormatError(ValueError):
    """Raised for malformed trace text; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def check_operator_type(name: str) -> str:
    if not isinstance(name, str) or not _TYPE_RE.match(name) or name == IDLE_TOKEN:
        raise ValueError(f"invalid operator type {name!r}")
    return name


@dataclass(frozen=True)
class ActiveSet:
    """Multiset of active operator types (type -> instance count).

    Stored as a tuple sorted by type so equality and hashing follow map
    semantics. An empty set means the device was idle.
    """

    entries: tuple[tuple[str, int], ...] = ()

    def __post_init__(self):
        items = sorted(self.entries)
        seen = set()
        for name, count in items:
            check_operator_type(name)
            if name in seen:
                raise ValueError(f"duplicate operator type {name!r}")
            seen.add(name)
            if int(count) != count or count < 1:
                raise ValueError(f"instance count for {name!r} must be a positive integer")
        object.__setattr__(self, "entries", tuple((n, int(c)) for n, c in items))

    @classmethod
    def of(cls, mapping: Mapping[str, int] | None = None, **counts: int) -> "ActiveSet":
        merged = dict(mapping or {})
        merged.update(counts)
        return cls(tuple(merged.items()))

    @property
    def idle(self) -> bool:
        return not self.entries

    def types(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.entries)

    def count(self, name: str) -> int:
        for n, c in self.entries:
            if n == name:
                return c
        return 0

    def as_dict(self) -> dict[str, int]:
        return dict(self.entries)

    def __iter__(self) -> Iterator[tuple[str, int]]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def render(self) -> str:
        if not self.entries:
            return IDLE_TOKEN
        return ",".join(f"{n}:{c}" for n, c in self.entries)

    @classmethod
    def parse(cls, token: str) -> "ActiveSet":
        if token == IDLE_TOKEN:
            return IDLE
        pairs = []
        for part in token.split(","):
            name, sep, count = part.partition(":")
            if not sep or not count.isdigit():
                raise ValueError(f"bad active-set entry {part!r}")
            pairs.append((name, int(count)))
        return cls(tuple(pairs))


IDLE = ActiveSet()


@dataclass(frozen=True)
class PollRecord:
    t: int
    active: ActiveSet = IDLE


@dataclass(frozen=True)
class SocRecord:
    t: int
    soc: int


@dataclass(frozen=True)
class DeviceSpec:
    """Device constants recorded in the trace header.

    ``e_per_percent`` is the energy (J) discharged per 1% SoC drop and
    ``poll_interval`` the polling period in milliseconds.
    """

    e_per_percent: float
    poll_interval: int = 1000
    label: str = ""

    def __post_init__(self):
        if not self.e_per_percent > 0:
            raise ValueError("e_per_percent must be > 0")
        if int(self.poll_interval) != self.poll_interval or self.poll_interval <= 0:
            raise ValueError("poll_interval must be a positive integer (ms)")
        if self.label and re.search(r"\s", self.label):
            raise ValueError("label must not contain whitespace")


@dataclass(frozen=True)
class TraceLog:
    device: DeviceSpec
    polls: tuple[PollRecord, ...] = field(default_factory=tuple)
    soc_events: tuple[SocRecord, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "polls", tuple(self.polls))
        object.__setattr__(self, "soc_events", tuple(self.soc_events))

    @property
    def poll_interval(self) -> int:
        return self.device.poll_interval

    def operator_types(self) -> list[str]:
        names = set()
        for p in self.polls:
            names.update(p.active.types())
        return sorted(names)


def format_number(value: float) -> str:
    """Shortest text that parses back to exactly ``value``."""
    value = float(value)
    if value.is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


def _render_header(device: DeviceSpec) -> str:
    parts = [
        "HDR",
        f"v={FORMAT_VERSION}",
        f"poll_ms={int(device.poll_interval)}",
        f"e1pct_j={format_number(device.e_per_percent)}",
    ]
    if device.label:
        parts.append(f"label={device.label}")
    return " ".join(parts)


def write_trace(log: TraceLog) -> str:
    """Render ``log`` canonically: header, then records in time order.

    Equal timestamps place POLL before SOC.
    """
    lines = [_render_header(log.device)]
    polls, socs = log.polls, log.soc_events
    i = j = 0
    while i < len(polls) or j < len(socs):
        if j >= len(socs) or (i < len(polls) and polls[i].t <= socs[j].t):
            p = polls[i]
            lines.append(f"POLL {p.t} {p.active.render()}")
            i += 1
        else:
            s = socs[j]
            lines.append(f"SOC {s.t} {s.soc}")
            j += 1
    return "\n".join(lines) + "\n"


def _parse_header(fields: list[str], lineno: int) -> DeviceSpec:
    kv = {}
    for item in fields[1:]:
        key, sep, value = item.partition("=")
        if not sep:
            raise TraceFormatError(f"bad header field {item!r}", lineno)
        kv[key] = value
    version = kv.pop("v", None)
    if version != str(FORMAT_VERSION):
        raise TraceFormatError(f"unsupported trace version {version!r}", lineno)
    try:
        poll_ms = int(kv.pop("poll_ms"))
        e1pct = float(kv.pop("e1pct_j"))
    except KeyError as exc:
        raise TraceFormatError(f"header missing {exc.args[0]}", lineno) from None
    except ValueError as exc:
        raise TraceFormatError(f"bad header value: {exc}", lineno) from None
    label = kv.pop("label", "")
    if kv:
        raise TraceFormatError(f"unknown header keys {sorted(kv)}", lineno)
    try:
        return DeviceSpec(e_per_percent=e1pct, poll_interval=poll_ms, label=label)
    except ValueError as exc:
        raise TraceFormatError(str(exc), lineno) from None


def _parse_int(token: str, what: str, lineno: int) -> int:
    if not re.fullmatch(r"\d+", token):
        raise TraceFormatError(f"bad {what} {token!r}", lineno)
    return int(token)


def parse_trace(text: str | TextIO | Iterable[str]) -> TraceLog:
    """Parse trace text into a validated :class:`TraceLog`.

    Malformed input raises :class:`TraceFormatError`; nothing is repaired.
    """
    if isinstance(text, str):
        lines: Iterable[str] = text.splitlines()
    else:
        lines = text

    device = None
    polls: list[PollRecord] = []
    socs: list[SocRecord] = []
    last_t = -1
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split()
        kind = fields[0]
        if kind == "HDR":
            if device is not None or polls or socs:
                raise TraceFormatError("header must appear once, before records", lineno)
            device = _parse_header(fields, lineno)
            continue
        if kind not in ("POLL", "SOC") or len(fields) != 3:
            raise TraceFormatError(f"unrecognized record {line!r}", lineno)
        t = _parse_int(fields[1], "timestamp", lineno)
        if t < last_t:
            raise TraceFormatError(f"non-monotonic timestamp {t}", lineno)
        if kind == "POLL":
            if polls and t <= polls[-1].t:
                raise TraceFormatError(f"non-monotonic timestamp {t}", lineno)
            if device is not None and polls and (t - polls[-1].t) % device.poll_interval:
                raise TraceFormatError("poll gap not a multiple of poll_interval", lineno)
            try:
                active = ActiveSet.parse(fields[2])
            except ValueError as exc:
                raise TraceFormatError(str(exc), lineno) from None
            polls.append(PollRecord(t, active))
        else:
            soc = _parse_int(fields[2], "SoC percent", lineno)
            if soc > 100:
                raise TraceFormatError(f"SoC {soc} out of range", lineno)
            if socs and t <= socs[-1].t:
                raise TraceFormatError(f"non-monotonic timestamp {t}", lineno)
            if socs and soc >= socs[-1].soc:
                raise TraceFormatError(f"SoC increase {socs[-1].soc} -> {soc}", lineno)
            socs.append(SocRecord(t, soc))
        last_t = t
    if device is None:
        raise TraceFormatError("missing HDR line")
    return TraceLog(device, tuple(polls), tuple(socs))


def read_trace(path) -> TraceLog:
    with open(path, encoding="utf-8") as fh:
        return parse_trace(fh)


def save_trace(log: TraceLog, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(write_trace(log))


def validate_trace(log: TraceLog) -> list[str]:
    """Return a list of invariant violations; empty when the trace is valid."""
    problems = []
    step = log.device.poll_interval
    for k, p in enumerate(log.polls):
        if p.t < 0:
            problems.append(f"negative poll timestamp @ index {k}")
        if k == 0:
            continue
        gap = p.t - log.polls[k - 1].t
        if gap <= 0:
            problems.append(f"poll timestamps not strictly increasing @ index {k}")
        elif gap % step:
            problems.append(f"poll gap not a multiple of poll_interval @ index {k}")
    for k, s in enumerate(log.soc_events):
        if s.t < 0:
            problems.append(f"negative SoC timestamp @ index {k}")
        if not 0 <= s.soc <= 100:
            problems.append(f"SoC out of range @ index {k}")
        if k == 0:
            continue
        prev = log.soc_events[k - 1]
        if s.t <= prev.t:
            problems.append(f"SoC timestamps not strictly increasing @ index {k}")
        if s.soc >= prev.soc:
            problems.append(f"SoC not strictly decreasing @ index {k}")
    return problems
