"""Model families known to the toolkit.

Only ``linear`` and ``svr`` are trainable. The other entries exist so a
config that names them fails with a reason instead of a KeyError.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable


class UnsupportedFamilyError(ValueError):
    pass


@dataclass(frozen=True)
class Family:
    name: str
    supported: bool
    rationale: str = ""
    fit: Callable | None = None


def _families() -> dict[str, Family]:
    from .linear import fit_linear
    from .svr import fit_svr

    return {
        "linear": Family("linear", True, "closed-form; coefficients invert to per-operator power", fit_linear),
        "svr": Family("svr", True, "captures non-linear power-state structure", fit_svr),
        "gam": Family("gam", False, "needs manual per-application tuning; accuracy varies across applications"),
        "rfr": Family("rfr", False, "on-device inference and training overhead too high"),
        "gbr": Family("gbr", False, "on-device inference and training overhead too high"),
        "nn": Family("nn", False, "too few discharge intervals to train; poor accuracy"),
    }


def get_family(name: str) -> Family:
    fams = _families()
    if name not in fams:
        raise UnsupportedFamilyError(f"unknown model family {name!r}; known: {sorted(fams)}")
    fam = fams[name]
    if not fam.supported:
        raise UnsupportedFamilyError(f"model family {name!r} is unsupported: {fam.rationale}")
    return fam


def family_names(supported_only: bool = True) -> list[str]:
    return sorted(k for k, f in _families().items() if f.supported or not supported_only)
