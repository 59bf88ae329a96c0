"""Ordinary least squares interval-duration model."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from ..segmentation import IntervalSample, design_matrix


class InsufficientDataError(ValueError):
    pass


class ZeroColumnWarning(UserWarning):
    pass


@dataclass
class LinearModel:
    """``duration_s = intercept + sum_k coefficients[k] * active_seconds[k]``.

    With count-weighted active seconds the intercept is the idle-only
    interval length and each coefficient is ``(p_idle - p_k) / p_idle``.
    """

    intercept: float
    coefficients: dict[str, float]
    schema: list[str]
    metadata: dict[str, Any] = field(default_factory=dict)

    family = "linear"

    def __post_init__(self):
        if list(self.coefficients) != list(self.schema):
            raise ValueError("coefficient keys must match the schema exactly")

    @property
    def coef_vector(self) -> np.ndarray:
        return np.array([self.coefficients[k] for k in self.schema], dtype=float)

    def predict(self, X) -> np.ndarray:
        X = _as_matrix(X, self.schema)
        return self.intercept + X @ self.coef_vector


def _as_matrix(X, schema: Sequence[str]) -> np.ndarray:
    if isinstance(X, np.ndarray):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != len(schema):
            raise ValueError(f"expected {len(schema)} features, got {X.shape[1]}")
        return X
    return design_matrix(list(X), schema)[0]


def schema_of(samples: Sequence[IntervalSample]) -> list[str]:
    return sorted({k for s in samples for k in s.features})


def fit_linear(samples: Sequence[IntervalSample], schema: Sequence[str] | None = None, **metadata) -> LinearModel:
    schema = list(schema) if schema is not None else schema_of(samples)
    X, y = design_matrix(samples, schema)
    return fit_linear_xy(X, y, schema, **metadata)


def fit_linear_xy(X: np.ndarray, y: np.ndarray, schema: Sequence[str], **metadata) -> LinearModel:
    """Least-squares fit with intercept.

    All-zero columns are dropped (coefficient reported as 0, warned). A
    rank-deficient design gets a ridge term of ``1e-8`` times the mean
    Gram diagonal, flagged in the metadata.
    """
    schema = list(schema)
    n, p = X.shape
    zero_cols = [k for k, col in zip(schema, X.T) if not np.any(col)]
    if zero_cols:
        warnings.warn(f"all-zero feature columns dropped: {zero_cols}", ZeroColumnWarning, stacklevel=2)
    keep = [i for i, k in enumerate(schema) if k not in zero_cols]
    if n <= len(keep) + 1:
        raise InsufficientDataError(f"insufficient samples: n={n} for {len(keep)} features plus intercept")
    A = np.column_stack([np.ones(n), X[:, keep]])
    meta = {"n": int(n), **metadata}
    rank = np.linalg.matrix_rank(A)
    if rank < A.shape[1]:
        gram = A.T @ A
        lam = 1e-8 * float(np.mean(np.diag(gram)))
        beta = np.linalg.solve(gram + lam * np.eye(A.shape[1]), A.T @ y)
        meta["ridge_lambda"] = lam
    else:
        # QR-based least squares
        q, r = np.linalg.qr(A)
        beta = np.linalg.solve(r, q.T @ y)
    coefs = dict.fromkeys(schema, 0.0)
    for i, b in zip(keep, beta[1:]):
        coefs[schema[i]] = float(b)
    if zero_cols:
        meta["dropped_features"] = zero_cols
    return LinearModel(float(beta[0]), coefs, schema, meta)
