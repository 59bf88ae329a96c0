"""Deterministic device, battery and workload simulator.

The simulator stands in for an instrumented phone: operators switch on
and off according to their schedules, every active instance adds its
dynamic power on top of the device idle power, and the battery emits a
SoC event each time the integrated energy reaches ``e_per_percent``.
Power is piecewise constant between schedule boundaries (and noise
resampling points), so integration is exact.

The run produces a :class:`~opwatt.trace.TraceLog` exactly as a device
client would log it, plus a :class:`GroundTruth` record of what really
happened, which tests and experiments use as an oracle.
"""

from __future__ import annotations

import bisect
import math
import re
from dataclasses import dataclass, field
from typing import Iterator, Sequence, Union

import numpy as np

from .trace import ActiveSet, DeviceSpec, PollRecord, SocRecord, TraceLog, check_operator_type, format_number

# Schedule windows are generated this far past the current time at most.
_MAX_HORIZON_S = 1e9


class SimulationConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PowerState:
    dyn_power_w: float
    probability: float = 1.0

    def __post_init__(self):
        if self.dyn_power_w < 0:
            raise SimulationConfigError("dyn_power_w must be >= 0")
        if not 0.0 <= self.probability <= 1.0:
            raise SimulationConfigError("state probability must lie in [0, 1]")


@dataclass(frozen=True)
class Periodic:
    """Active for ``active_s`` at the start of every ``period_s``."""

    period_s: float
    active_s: float
    instances: int = 1
    phase_s: float = 0.0

    def windows(self) -> Iterator[tuple[float, float]]:
        k = 0
        while True:
            start = self.phase_s + k * self.period_s
            yield start, start + self.active_s
            k += 1

    def validate(self):
        if not (self.period_s > 0 and self.active_s > 0 and self.phase_s >= 0):
            raise SimulationConfigError("Periodic durations must be > 0")
        if self.active_s > self.period_s:
            raise SimulationConfigError("Periodic active_s exceeds period_s")


@dataclass(frozen=True)
class Alternating:
    """Activations alternate between ``long_s`` and ``short_s``.

    One cycle is: on ``long_s``, off ``short_s``, on ``short_s``, off
    ``long_s``, so consecutive discharge intervals see very different
    active fractions.
    """

    long_s: float
    short_s: float
    instances: int = 1
    phase_s: float = 0.0

    def windows(self) -> Iterator[tuple[float, float]]:
        cycle = 2 * (self.long_s + self.short_s)
        k = 0
        while True:
            base = self.phase_s + k * cycle
            yield base, base + self.long_s
            second = base + self.long_s + self.short_s
            yield second, second + self.short_s
            k += 1

    def validate(self):
        if not (self.long_s > 0 and self.short_s > 0 and self.phase_s >= 0):
            raise SimulationConfigError("Alternating durations must be > 0")


@dataclass(frozen=True)
class AlwaysOn:
    instances: int = 1

    def windows(self) -> Iterator[tuple[float, float]]:
        yield 0.0, math.inf

    def validate(self):
        pass


Schedule = Union[Periodic, Alternating, AlwaysOn]


@dataclass(frozen=True)
class OperatorSpec:
    type: str
    states: tuple[PowerState, ...]
    schedule: Schedule

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        try:
            check_operator_type(self.type)
        except ValueError as exc:
            raise SimulationConfigError(str(exc)) from None
        if not self.states:
            raise SimulationConfigError(f"operator {self.type} has no power states")
        total = sum(s.probability for s in self.states)
        if abs(total - 1.0) > 1e-9:
            raise SimulationConfigError(f"state probabilities of {self.type} sum to {total}, not 1")
        if int(self.schedule.instances) != self.schedule.instances or self.schedule.instances < 1:
            raise SimulationConfigError("instances must be a positive integer")
        self.schedule.validate()

    @property
    def mean_dyn_power_w(self) -> float:
        return sum(s.dyn_power_w * s.probability for s in self.states)


@dataclass(frozen=True)
class NoiseSpec:
    """Noise model. Defaults are the calibrated setting used by experiments."""

    soc_timing_sigma_s: float = 1.0
    power_sigma_frac: float = 0.02
    poll_drop_prob: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.soc_timing_sigma_s < 0 or self.power_sigma_frac < 0:
            raise SimulationConfigError("noise sigmas must be >= 0")
        if not 0.0 <= self.poll_drop_prob < 1.0:
            raise SimulationConfigError("poll_drop_prob must lie in [0, 1)")

    @classmethod
    def zero(cls, seed: int = 0) -> "NoiseSpec":
        return cls(0.0, 0.0, 0.0, seed)


@dataclass(frozen=True)
class BatterySpec:
    e_per_percent: float = 100.0
    idle_power_w: float = 0.717
    initial_soc: int = 100

    def __post_init__(self):
        if not (self.e_per_percent > 0 and self.idle_power_w > 0 and self.initial_soc > 0):
            raise SimulationConfigError("battery parameters must be > 0")
        if self.initial_soc > 100 or int(self.initial_soc) != self.initial_soc:
            raise SimulationConfigError("initial_soc must be an integer percent <= 100")

    @property
    def idle_interval_s(self) -> float:
        return self.e_per_percent / self.idle_power_w


@dataclass(frozen=True)
class IntervalEnergy:
    """Energy actually drawn between two consecutive true SoC crossings.

    ``active_j``/``idle_j`` include power noise and always sum to the
    energy quantum; the ``clean_*`` fields integrate the noise-free
    planted power over the same span.
    """

    index: int
    start_s: float
    end_s: float
    active_j: float
    idle_j: float
    clean_active_j: float
    clean_idle_j: float

    @property
    def total_j(self) -> float:
        return self.active_j + self.idle_j

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


@dataclass
class GroundTruth:
    battery: BatterySpec
    operator_powers: dict[tuple[str, int], float]
    interval_ledger: list[IntervalEnergy]
    crossings_s: list[float] = field(default_factory=list)
    # piecewise-constant clean power timeline; piece k covers [starts[k], starts[k+1])
    starts: np.ndarray = field(default_factory=lambda: np.zeros(0))
    clean_power: np.ndarray = field(default_factory=lambda: np.zeros(0))
    end_s: float = 0.0

    def power_at(self, t: float) -> float:
        """Noise-free device power at time ``t`` (seconds)."""
        if not 0 <= t <= self.end_s:
            raise ValueError(f"t={t} outside simulated horizon [0, {self.end_s}]")
        k = bisect.bisect_right(self.starts, t) - 1
        return float(self.clean_power[max(k, 0)])

    def energy_between(self, t0: float, t1: float) -> float:
        """Integral of the noise-free power over ``[t0, t1]`` seconds."""
        if t1 <= t0:
            return 0.0
        ends = np.append(self.starts[1:], self.end_s)
        lo = np.clip(self.starts, t0, t1)
        hi = np.clip(ends, t0, t1)
        return float(np.sum(self.clean_power * (hi - lo)))

    state_probs: dict[tuple[str, int], float] = field(default_factory=dict)

    def operator_types(self) -> list[str]:
        return sorted({k[0] for k in self.operator_powers})

    def mean_dyn_power(self, op_type: str) -> float:
        keys = [k for k in self.operator_powers if k[0] == op_type]
        if not keys:
            raise KeyError(op_type)
        return sum(self.operator_powers[k] * self.state_probs.get(k, 1.0 / len(keys)) for k in keys)

    def absolute_power(self, op_type: str) -> float:
        """Per-instance absolute power (idle + probability-weighted dynamic power)."""
        return self.battery.idle_power_w + self.mean_dyn_power(op_type)


def power_at(active_states: Sequence[PowerState] | Sequence[float], battery: BatterySpec) -> float:
    """Noise-free device power for the given active instance states."""
    total = battery.idle_power_w
    for s in active_states:
        total += s.dyn_power_w if isinstance(s, PowerState) else float(s)
    return total


class _OperatorRun:
    """Iterates one operator's activation windows and draws per-activation states."""

    def __init__(self, spec: OperatorSpec, rng: np.random.Generator):
        self.spec = spec
        self.rng = rng
        self._windows = spec.schedule.windows()
        self._probs = np.array([s.probability for s in spec.states])
        self.window = next(self._windows)
        self.active = False
        self.dyn = 0.0

    def next_boundary(self, t: float) -> float:
        start, end = self.window
        return end if self.active else start

    def advance(self, t: float):
        """Apply every window edge at time ``t``."""
        while True:
            start, end = self.window
            if not self.active and start <= t:
                self.active = True
                n = self.spec.schedule.instances
                if len(self.spec.states) == 1:
                    picks = np.zeros(n, dtype=int)
                else:
                    picks = self.rng.choice(len(self.spec.states), size=n, p=self._probs)
                self.dyn = float(sum(self.spec.states[i].dyn_power_w for i in picks))
            elif self.active and end <= t:
                self.active = False
                self.dyn = 0.0
                self.window = next(self._windows)
            else:
                return


def simulate(
    operators: Sequence[OperatorSpec],
    battery: BatterySpec,
    noise: NoiseSpec,
    poll_interval_ms: int = 1000,
    max_intervals: int | None = None,
    max_time_s: float | None = None,
    label: str = "sim",
) -> tuple[TraceLog, GroundTruth]:
    """Run one discharge from ``battery.initial_soc``.

    Exactly one of ``max_intervals`` (complete discharge intervals, i.e.
    ``max_intervals + 1`` SoC events) or ``max_time_s`` must be given.
    A trace holds at most ``initial_soc - 1`` complete intervals.
    """
    if (max_intervals is None) == (max_time_s is None):
        raise SimulationConfigError("give exactly one of max_intervals or max_time_s")
    if max_intervals is not None:
        if max_intervals < 1:
            raise SimulationConfigError("max_intervals must be positive")
        if max_intervals > battery.initial_soc - 1:
            raise SimulationConfigError(
                f"{max_intervals} intervals need more than the {battery.initial_soc}% available; "
                "simulate several discharges instead"
            )
        target_events = max_intervals + 1
    else:
        if not max_time_s > 0:
            raise SimulationConfigError("max_time_s must be positive")
        target_events = battery.initial_soc
    if int(poll_interval_ms) != poll_interval_ms or poll_interval_ms <= 0:
        raise SimulationConfigError("poll_interval_ms must be a positive integer")
    names = [op.type for op in operators]
    if len(set(names)) != len(names):
        raise SimulationConfigError("operator types must be unique")

    ss = np.random.SeedSequence(int(noise.seed) & 0xFFFFFFFFFFFFFFFF)
    state_ss, power_ss, jitter_ss, drop_ss = ss.spawn(4)
    op_rngs = [np.random.default_rng(s) for s in state_ss.spawn(max(len(operators), 1))]
    power_rng = np.random.default_rng(power_ss)
    jitter_rng = np.random.default_rng(jitter_ss)
    drop_rng = np.random.default_rng(drop_ss)

    runs = [_OperatorRun(op, rng) for op, rng in zip(operators, op_rngs)]
    E = battery.e_per_percent
    idle = battery.idle_power_w
    step_s = poll_interval_ms / 1000.0
    noisy = noise.power_sigma_frac > 0

    starts: list[float] = []
    sets: list[ActiveSet] = []
    clean: list[float] = []
    crossings: list[float] = []
    ledger: list[IntervalEnergy] = []
    acc = 0.0
    # accumulators for the interval currently being discharged
    cur = [0.0, 0.0, 0.0, 0.0]  # active, idle, clean_active, clean_idle

    t = 0.0
    stop_at = max_time_s
    noise_k = 0
    factor = 1.0
    while True:
        for r in runs:
            r.advance(t)
        if noisy and t >= noise_k * step_s:
            factor = max(0.0, 1.0 + noise.power_sigma_frac * power_rng.standard_normal())
            noise_k = int(math.floor(t / step_s)) + 1
        nxt = min([r.next_boundary(t) for r in runs] + [_MAX_HORIZON_S])
        if noisy:
            nxt = min(nxt, noise_k * step_s)
        if stop_at is not None:
            nxt = min(nxt, stop_at)
        dyn = sum(r.dyn for r in runs)
        p_clean = idle + dyn
        p = p_clean * factor
        starts.append(t)
        clean.append(p_clean)
        sets.append(ActiveSet(tuple((r.spec.type, r.spec.schedule.instances) for r in runs if r.active)))

        seg_t = t
        while len(crossings) < target_events and p > 0 and acc + p * (nxt - seg_t) >= E:
            dt = (E - acc) / p
            c = seg_t + dt
            _accumulate(cur, dyn, idle, factor, dt)
            if crossings:
                ledger.append(
                    IntervalEnergy(len(ledger), crossings[-1], c, cur[0], cur[1], cur[2], cur[3])
                )
            crossings.append(c)
            cur = [0.0, 0.0, 0.0, 0.0]
            acc = 0.0
            seg_t = c
        if len(crossings) < target_events:
            acc += p * (nxt - seg_t)
            _accumulate(cur, dyn, idle, factor, nxt - seg_t)
        elif stop_at is None:
            stop_at = max(
                math.ceil((crossings[-1] + 5 * noise.soc_timing_sigma_s) / step_s) * step_s, step_s
            )
            if nxt > stop_at:
                nxt = stop_at
        if nxt >= _MAX_HORIZON_S:
            raise SimulationConfigError("device never discharges: zero power with no further events")
        t = nxt
        if stop_at is not None and t >= stop_at:
            break

    end_s = t
    # SoC events with timing jitter, clamped to keep strict ordering
    soc_events = []
    last_ms = -1
    for k, c in enumerate(crossings):
        jitter = noise.soc_timing_sigma_s * jitter_rng.standard_normal() if noise.soc_timing_sigma_s else 0.0
        ms = int(round((c + jitter) * 1000.0))
        ms = min(max(ms, last_ms + 1, 0), int(end_s * 1000))
        soc_events.append(SocRecord(ms, battery.initial_soc - 1 - k))
        last_ms = ms

    start_arr = np.asarray(starts)
    polls = []
    n_polls = int(math.floor(end_s * 1000 / poll_interval_ms + 1e-9))
    drops = drop_rng.random(n_polls) < noise.poll_drop_prob if noise.poll_drop_prob else np.zeros(n_polls, bool)
    for k in range(1, n_polls + 1):
        if drops[k - 1]:
            continue
        t_ms = k * poll_interval_ms
        # the poll reports the set active just before its instant
        idx = int(np.searchsorted(start_arr, t_ms / 1000.0, side="left")) - 1
        polls.append(PollRecord(t_ms, sets[max(idx, 0)]))

    device = DeviceSpec(e_per_percent=E, poll_interval=int(poll_interval_ms), label=label)
    log = TraceLog(device, tuple(polls), tuple(soc_events))
    truth = GroundTruth(
        battery=battery,
        operator_powers={(op.type, i): s.dyn_power_w for op in operators for i, s in enumerate(op.states)},
        interval_ledger=ledger,
        crossings_s=crossings,
        starts=start_arr,
        clean_power=np.asarray(clean),
        end_s=end_s,
        state_probs={(op.type, i): s.probability for op in operators for i, s in enumerate(op.states)},
    )
    return log, truth


def _accumulate(cur: list[float], dyn: float, idle: float, factor: float, dt: float):
    cur[0] += dyn * factor * dt
    cur[1] += idle * factor * dt
    cur[2] += dyn * dt
    cur[3] += idle * dt


def simulate_runs(
    operators: Sequence[OperatorSpec],
    battery: BatterySpec,
    noise: NoiseSpec,
    n_intervals: int,
    poll_interval_ms: int = 1000,
    per_run: int | None = None,
    label: str = "sim",
) -> list[tuple[TraceLog, GroundTruth]]:
    """Simulate enough full discharges to collect ``n_intervals`` intervals.

    Each discharge gets its own seed derived from ``noise.seed`` and its
    run index, so the collection is reproducible.
    """
    cap = per_run or battery.initial_soc - 1
    cap = min(cap, battery.initial_soc - 1)
    out = []
    remaining = n_intervals
    run = 0
    while remaining > 0:
        k = min(cap, remaining)
        seed = int(np.random.SeedSequence([int(noise.seed) & 0xFFFFFFFF, run]).generate_state(1)[0])
        run_noise = NoiseSpec(noise.soc_timing_sigma_s, noise.power_sigma_frac, noise.poll_drop_prob, seed)
        out.append(simulate(operators, battery, run_noise, poll_interval_ms, max_intervals=k, label=label))
        remaining -= k
        run += 1
    return out


# ---------------------------------------------------------------------------
# scenario catalog

IDLE_W = 0.717
E_PER_PERCENT_J = 100.0


def _single(op_type: str, absolute_w: float, schedule: Schedule) -> OperatorSpec:
    return OperatorSpec(op_type, (PowerState(absolute_w - IDLE_W, 1.0),), schedule)


def two_state_operator(
    ratio: float, prob_high: float = 0.5, low_w: float = 0.25, op_type: str = "FaceRec",
    schedule: Schedule | None = None,
) -> OperatorSpec:
    """Operator whose high state draws ``ratio`` times the low-state dynamic power."""
    if ratio < 1:
        raise SimulationConfigError("power ratio must be >= 1")
    states = (PowerState(low_w, 1.0 - prob_high), PowerState(ratio * low_w, prob_high))
    return OperatorSpec(op_type, states, schedule or Periodic(80.0, 40.0, 1))


_SCENARIO_RE = re.compile(r"^two-state(?:[(:]\s*([0-9.]+)\s*(?:,\s*([0-9.]+))?\s*\)?)?$")


def scenario_names() -> list[str]:
    return ["fixed-single", "fixed-nq", "fixed-concurrent", "variable-alternating", "two-state(ratio, prob)", "realworld-like"]


def make_scenario(name: str) -> tuple[list[OperatorSpec], BatterySpec, NoiseSpec]:
    """Named, reproducible workload configurations.

    Noise is the calibrated default; callers swap in :meth:`NoiseSpec.zero`
    for exact checks. ``two-state`` accepts ``two-state(8, 0.5)`` or the
    CLI-friendly ``two-state:8,0.5``.
    """
    battery = BatterySpec(E_PER_PERCENT_J, IDLE_W, 100)
    noise = NoiseSpec()
    name = name.strip()
    if name == "fixed-single":
        ops = [_single("NQ", 3.2, AlwaysOn(1))]
    elif name == "fixed-nq":
        ops = [_single("NQ", 3.2, Periodic(50.0, 10.0, 1))]
    elif name == "fixed-concurrent":
        ops = [
            _single("NQ", 2.7, Periodic(100.0, 8.0, 1)),
            _single("Sort", 4.0, Periodic(130.0, 6.0, 1, phase_s=10.0)),
        ]
    elif name == "variable-alternating":
        ops = [OperatorSpec("Nums", (PowerState(0.14, 1.0),), Alternating(120.0, 10.0, 6))]
    elif name == "realworld-like":
        ops = [
            _single("FaceDet", 1.8, Periodic(50.0, 30.0, 1)),
            _single("Blur", 1.2, Alternating(120.0, 10.0, 2, phase_s=5.0)),
            _single("Upload", 0.9, Periodic(23.0, 7.0, 1, phase_s=3.0)),
        ]
    else:
        m = _SCENARIO_RE.match(name)
        if not m:
            raise SimulationConfigError(f"unknown scenario {name!r}; known: {', '.join(scenario_names())}")
        ratio = float(m.group(1)) if m.group(1) else 8.0
        prob = float(m.group(2)) if m.group(2) else 0.5
        ops = [two_state_operator(ratio, prob)]
    return ops, battery, noise


# ---------------------------------------------------------------------------
# ground-truth sidecar (<trace>.truth)

TRUTH_VERSION = 1


def write_truth(truth: GroundTruth) -> str:
    """Key-value rendering of the planted parameters and the energy ledger.

    Lines::

        TRUTH v=1
        BATTERY e_per_percent=<J> idle_power_w=<W> initial_soc=<pct>
        OP <type> <state> dyn_power_w=<W> probability=<p>
        INTERVAL <i> start_s=.. end_s=.. active_j=.. idle_j=.. clean_active_j=.. clean_idle_j=..
    """
    b = truth.battery
    lines = [
        f"TRUTH v={TRUTH_VERSION}",
        f"BATTERY e_per_percent={format_number(b.e_per_percent)} "
        f"idle_power_w={format_number(b.idle_power_w)} initial_soc={b.initial_soc}",
    ]
    for (op, idx), dyn in sorted(truth.operator_powers.items()):
        prob = truth.state_probs.get((op, idx), 1.0)
        lines.append(f"OP {op} {idx} dyn_power_w={format_number(dyn)} probability={format_number(prob)}")
    for row in truth.interval_ledger:
        lines.append(
            f"INTERVAL {row.index} start_s={row.start_s!r} end_s={row.end_s!r} "
            f"active_j={row.active_j!r} idle_j={row.idle_j!r} "
            f"clean_active_j={row.clean_active_j!r} clean_idle_j={row.clean_idle_j!r}"
        )
    return "\n".join(lines) + "\n"


def parse_truth(text: str) -> GroundTruth:
    battery = None
    powers: dict[tuple[str, int], float] = {}
    probs: dict[tuple[str, int], float] = {}
    ledger = []
    for lineno, line in enumerate(text.splitlines(), 1):
        fields = line.split()
        if not fields or fields[0].startswith("#"):
            continue
        kv = dict(f.split("=", 1) for f in fields if "=" in f)
        if fields[0] == "TRUTH":
            if kv.get("v") != str(TRUTH_VERSION):
                raise ValueError(f"line {lineno}: unsupported truth version")
        elif fields[0] == "BATTERY":
            battery = BatterySpec(float(kv["e_per_percent"]), float(kv["idle_power_w"]), int(kv["initial_soc"]))
        elif fields[0] == "OP":
            key = (fields[1], int(fields[2]))
            powers[key] = float(kv["dyn_power_w"])
            probs[key] = float(kv.get("probability", 1.0))
        elif fields[0] == "INTERVAL":
            ledger.append(
                IntervalEnergy(
                    int(fields[1]), float(kv["start_s"]), float(kv["end_s"]), float(kv["active_j"]),
                    float(kv["idle_j"]), float(kv["clean_active_j"]), float(kv["clean_idle_j"]),
                )
            )
        else:
            raise ValueError(f"line {lineno}: unknown record {fields[0]!r}")
    if battery is None:
        raise ValueError("truth file has no BATTERY line")
    return GroundTruth(battery, powers, ledger, state_probs=probs)
