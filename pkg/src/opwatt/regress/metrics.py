"""Prediction-quality metrics for interval-duration models."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class Metrics:
    """RMSE in seconds, accuracy as ``100 * (1 - MAPE)`` and R^2."""

    rmse_s: float
    accuracy_pct: float
    r2: float
    n: int

    def as_dict(self) -> dict:
        return asdict(self)


def compute_metrics(predictions, actuals) -> Metrics:
    pred = np.asarray(predictions, dtype=float).ravel()
    act = np.asarray(actuals, dtype=float).ravel()
    if pred.shape != act.shape or pred.size == 0:
        raise ValueError("predictions and actuals must be non-empty and equally long")
    err = pred - act
    rmse = float(np.sqrt(np.mean(err**2)))
    ok = act != 0
    if not ok.all():
        warnings.warn(f"{int((~ok).sum())} zero actuals excluded from accuracy", RuntimeWarning, stacklevel=2)
    accuracy = float(100.0 * (1.0 - np.mean(np.abs(err[ok]) / np.abs(act[ok])))) if ok.any() else float("nan")
    ss_res = float(np.sum(err**2))
    ss_tot = float(np.sum((act - act.mean()) ** 2))
    if ss_tot > 0:
        r2 = 1.0 - ss_res / ss_tot
    else:
        # constant targets: perfect or no explanatory power
        r2 = 1.0 if ss_res == 0 else 0.0
    return Metrics(rmse, accuracy, r2, int(pred.size))
