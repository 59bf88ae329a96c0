"""Per-operator power from a fitted linear interval model.

With ``T = E / p_idle + sum_k (p_idle - p_k) / p_idle * t_k`` the
intercept gives ``p_idle = E / beta_0`` and each coefficient gives
``p_k = p_idle * (1 - beta_k)``. ``|beta_k|`` is the operator's relative
power. For operators with several power states the result is their
time-averaged power; SVR models have no such reading.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

from .regress.linear import LinearModel
from .segmentation import DischargeInterval
from .trace import ActiveSet, format_number

log = logging.getLogger(__name__)


class UnphysicalModelError(ValueError):
    pass


class CoolerThanIdleWarning(UserWarning):
    pass


class UncoveredOperatorError(KeyError):
    pass


@dataclass(frozen=True)
class RelativePower:
    value: float
    hotter_than_idle: bool


@dataclass(frozen=True)
class OperatorPower:
    relative_power: float
    absolute_power_w: float
    dyn_power_w: float
    hotter_than_idle: bool
    flag: str = "ok"


@dataclass(frozen=True)
class PowerEstimate:
    p_idle_w: float
    per_operator: dict[str, OperatorPower]
    e_per_percent: float
    low_confidence: bool = False
    notes: tuple[str, ...] = ()

    def dyn_power(self, key: str) -> float:
        return self.per_operator[key].dyn_power_w


def _require_linear(model) -> LinearModel:
    if not isinstance(model, LinearModel):
        raise TypeError(f"power attribution needs a linear model, got {getattr(model, 'family', type(model).__name__)}")
    if not model.intercept > 0:
        raise UnphysicalModelError(f"intercept {model.intercept!r} s is not positive; the model is unphysical")
    return model


def relative_power(model: LinearModel) -> dict[str, RelativePower]:
    """``|beta_k|`` per operator and whether the operator draws more than idle."""
    model = _require_linear(model)
    out = {}
    for k, b in model.coefficients.items():
        if b > 0:
            warnings.warn(f"{k}: positive coefficient {b:.4g}, operator appears cooler than idle",
                          CoolerThanIdleWarning, stacklevel=2)
        out[k] = RelativePower(abs(b), b < 0)
    return out


def absolute_power(model: LinearModel, e_per_percent: float) -> PowerEstimate:
    model = _require_linear(model)
    if not e_per_percent > 0:
        raise ValueError("e_per_percent must be > 0")
    p_idle = e_per_percent / model.intercept
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CoolerThanIdleWarning)
        rel = relative_power(model)
    per_op = {}
    notes = []
    low = False
    for k, b in model.coefficients.items():
        absolute = p_idle * (1.0 - b)
        if absolute < 0:
            flag = "negative-power"
            low = True
            notes.append(f"{k}: negative absolute power {absolute:.4g} W")
        elif b > 0:
            flag = "cooler-than-idle"
            notes.append(f"{k}: cooler than idle")
        elif b == 0:
            flag = "idle-like"
        else:
            flag = "ok"
        per_op[k] = OperatorPower(rel[k].value, absolute, absolute - p_idle, rel[k].hotter_than_idle, flag)
    for note in notes:
        log.warning(note)
    return PowerEstimate(p_idle, per_op, float(e_per_percent), low, tuple(notes))


@dataclass(frozen=True)
class LedgerEntry:
    start_s: float
    end_s: float
    active: ActiveSet
    power_w: float
    energy_j: float


@dataclass(frozen=True)
class EnergyLedger:
    interval: int
    entries: tuple[LedgerEntry, ...]
    e_per_percent: float

    @property
    def total_j(self) -> float:
        return math.fsum(e.energy_j for e in self.entries)

    @property
    def residual_j(self) -> float:
        return self.total_j - self.e_per_percent


def segment_power(estimate: PowerEstimate, active: ActiveSet) -> float:
    p = estimate.p_idle_w
    for name, count in active:
        key = f"{name}#{count}"
        if key in estimate.per_operator:
            p += estimate.per_operator[key].dyn_power_w
        elif name in estimate.per_operator:
            p += count * estimate.per_operator[name].dyn_power_w
        else:
            raise UncoveredOperatorError(f"operator {name!r} is not covered by the power estimate")
    return p


def attribute_interval(estimate: PowerEstimate, interval: DischargeInterval) -> EnergyLedger:
    """Energy per execution segment: ``(p_idle + sum count * dyn_k) * duration``."""
    entries = []
    for seg in interval.segments:
        p = segment_power(estimate, seg.active)
        entries.append(LedgerEntry(seg.start_ms / 1000.0, seg.end_ms / 1000.0, seg.active, p, p * seg.duration_s))
    return EnergyLedger(interval.index, tuple(entries), estimate.e_per_percent)


ESTIMATE_HEADER = ["operator", "relative_power", "absolute_w", "dyn_w", "flag"]


def estimate_csv(estimate: PowerEstimate, ledgers: Sequence[EnergyLedger] = ()) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ESTIMATE_HEADER)
    for k, op in estimate.per_operator.items():
        w.writerow([k, repr(op.relative_power), repr(op.absolute_power_w), repr(op.dyn_power_w), op.flag])
    summary = f"# summary p_idle_w={estimate.p_idle_w!r} e1pct_j={format_number(estimate.e_per_percent)}"
    if ledgers:
        mean_res = math.fsum(lg.residual_j for lg in ledgers) / len(ledgers)
        summary += f" intervals={len(ledgers)} mean_residual_j={mean_res!r}"
    summary += f" low_confidence={int(estimate.low_confidence)}"
    return buf.getvalue() + summary + "\n"


def parse_estimate_csv(text: str) -> PowerEstimate:
    """Inverse of :func:`estimate_csv` (the residual is not restored)."""
    rows = []
    summary: Mapping[str, str] = {}
    for line in text.splitlines():
        if line.startswith("# summary"):
            summary = dict(tok.split("=", 1) for tok in line.split()[2:])
        elif line.strip() and not line.startswith("#"):
            rows.append(line)
    reader = csv.reader(rows)
    header = next(reader, None)
    if header != ESTIMATE_HEADER:
        raise ValueError(f"estimate CSV header must be {','.join(ESTIMATE_HEADER)}")
    if "p_idle_w" not in summary or "e1pct_j" not in summary:
        raise ValueError("estimate CSV lacks the summary line")
    per_op = {}
    for rec in reader:
        k, rel, ab, dyn, flag = rec
        per_op[k] = OperatorPower(float(rel), float(ab), float(dyn), float(dyn) > 0, flag)
    return PowerEstimate(float(summary["p_idle_w"]), per_op, float(summary["e1pct_j"]),
                         summary.get("low_confidence", "0") == "1")
