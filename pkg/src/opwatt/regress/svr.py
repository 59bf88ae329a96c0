"""Epsilon-insensitive support vector regression solved by SMO.

Features are z-scored on the training set; the target stays in seconds,
so ``epsilon`` is the tube half-width in seconds. The dual is solved by
the compiled :mod:`opwatt.regress._smo` core when it is importable and
by :mod:`opwatt.regress._smo_py` otherwise. Set ``OPWATT_BACKEND=python``
to force the fallback.
"""

from __future__ import annotations

import logging
import os
import warnings
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from . import _smo_py
from .linear import InsufficientDataError, _as_matrix, schema_of
from ..segmentation import IntervalSample, design_matrix

log = logging.getLogger(__name__)

try:
    from . import _smo as _smo_c
except ImportError:  # pragma: no cover - depends on the build
    _smo_c = None

BACKENDS = {"python": _smo_py.solve}
if _smo_c is not None:
    BACKENDS["compiled"] = _smo_c.solve


def default_backend() -> str:
    forced = os.environ.get("OPWATT_BACKEND")
    if forced:
        if forced not in BACKENDS:
            raise RuntimeError(f"OPWATT_BACKEND={forced!r} unavailable; have {sorted(BACKENDS)}")
        return forced
    return "compiled" if "compiled" in BACKENDS else "python"


BACKEND = default_backend()

DEFAULT_TOL = 1e-3
DEFAULT_MAX_PASSES = 10_000


class ConstantFeatureWarning(UserWarning):
    pass


def kernel_matrix(A: np.ndarray, B: np.ndarray, kernel: str, gamma: float | None = None) -> np.ndarray:
    if kernel == "linear":
        return A @ B.T
    if kernel == "rbf":
        if gamma is None or not gamma > 0:
            raise ValueError("rbf kernel needs gamma > 0")
        d2 = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * (A @ B.T)
        return np.exp(-gamma * np.maximum(d2, 0.0))
    raise ValueError(f"unknown kernel {kernel!r}")


@dataclass
class Standardizer:
    used: list[int]
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray, schema: Sequence[str] = ()) -> "Standardizer":
        std = X.std(axis=0)
        used = [i for i, s in enumerate(std) if s > 0]
        dropped = [schema[i] if i < len(schema) else i for i in range(X.shape[1]) if i not in used]
        if dropped:
            warnings.warn(f"constant features dropped for SVR: {dropped}", ConstantFeatureWarning, stacklevel=3)
        return cls(used, X[:, used].mean(axis=0), std[used])

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (X[:, self.used] - self.mean) / self.std


@dataclass
class SvrModel:
    kernel: str
    gamma: float | None
    C: float
    epsilon: float
    support_vectors: np.ndarray
    dual_coef: np.ndarray
    bias: float
    standardization: Standardizer
    schema: list[str]
    metadata: dict[str, Any] = field(default_factory=dict)

    family = "svr"

    @property
    def converged(self) -> bool:
        return bool(self.metadata.get("converged", True))

    def decision(self, Z: np.ndarray) -> np.ndarray:
        if self.support_vectors.shape[0] == 0:
            return np.full(Z.shape[0], self.bias)
        K = kernel_matrix(Z, self.support_vectors, self.kernel, self.gamma)
        return K @ self.dual_coef + self.bias

    def predict(self, X) -> np.ndarray:
        X = _as_matrix(X, self.schema)
        return self.decision(self.standardization.transform(X))


@dataclass
class DualSolution:
    beta: np.ndarray
    bias: float
    iterations: int
    converged: bool
    gap: float


def solve_dual(
    K: np.ndarray, y: np.ndarray, C: float, epsilon: float,
    tol: float = DEFAULT_TOL, max_passes: int = DEFAULT_MAX_PASSES, backend: str | None = None,
) -> DualSolution:
    """Solve the epsilon-SVR dual for a precomputed kernel matrix.

    The iteration budget is ``max_passes`` sweeps, one sweep being ``n``
    working-pair updates.
    """
    if not C > 0:
        raise ValueError("C must be > 0")
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    n = len(y)
    solve = BACKENDS[backend or BACKEND]
    a, _G, rho, it, conv, gap = solve(
        np.ascontiguousarray(K, dtype=np.float64), np.ascontiguousarray(y, dtype=np.float64),
        float(C), float(epsilon), float(tol), int(max_passes) * max(n, 1),
    )
    return DualSolution(a[:n] - a[n:], -float(rho), int(it), bool(conv), float(gap))


def fit_svr(
    samples: Sequence[IntervalSample],
    C: float = 10.0,
    epsilon: float = 1.0,
    kernel: str = "rbf",
    gamma: float | None = None,
    schema: Sequence[str] | None = None,
    **kwargs,
) -> SvrModel:
    schema = list(schema) if schema is not None else schema_of(samples)
    X, y = design_matrix(samples, schema)
    return fit_svr_xy(X, y, schema, C=C, epsilon=epsilon, kernel=kernel, gamma=gamma, **kwargs)


def fit_svr_xy(
    X: np.ndarray,
    y: np.ndarray,
    schema: Sequence[str],
    C: float = 10.0,
    epsilon: float = 1.0,
    kernel: str = "rbf",
    gamma: float | None = None,
    gamma_scale: float | None = None,
    tol: float = DEFAULT_TOL,
    max_passes: int = DEFAULT_MAX_PASSES,
    backend: str | None = None,
    **metadata,
) -> SvrModel:
    """Fit epsilon-SVR on raw features.

    For the rbf kernel either ``gamma`` (in standardized units) or
    ``gamma_scale`` (multiplier on ``1 / n_features``) must be given;
    ``gamma_scale`` defaults to 1.
    """
    schema = list(schema)
    n = X.shape[0]
    if n < 4:
        raise InsufficientDataError(f"SVR needs at least 4 samples, got {n}")
    std = Standardizer.fit(X, schema)
    Z = std.transform(X)
    if kernel == "rbf" and gamma is None:
        gamma = (1.0 if gamma_scale is None else gamma_scale) / max(Z.shape[1], 1)
    if kernel == "rbf" and not gamma > 0:
        raise ValueError("degenerate kernel: gamma must be > 0")
    K = kernel_matrix(Z, Z, kernel, gamma)
    sol = solve_dual(K, y, C, epsilon, tol, max_passes, backend)
    if not sol.converged:
        log.warning("SMO did not converge in %d passes (gap %.3g)", max_passes, sol.gap)
    return _assemble(sol, Z, std, schema, kernel, gamma, C, epsilon, dict(metadata, n=int(n)))


def _assemble(sol: DualSolution, Z, std, schema, kernel, gamma, C, epsilon, metadata) -> SvrModel:
    sv = sol.beta != 0
    meta = dict(metadata)
    meta.update(
        converged=sol.converged, iterations=sol.iterations, kkt_gap=sol.gap,
        support_index=[int(i) for i in np.flatnonzero(sv)],
    )
    return SvrModel(
        kernel=kernel,
        gamma=float(gamma) if kernel == "rbf" else None,
        C=float(C),
        epsilon=float(epsilon),
        support_vectors=Z[sv].copy(),
        dual_coef=sol.beta[sv].copy(),
        bias=sol.bias,
        standardization=std,
        schema=list(schema),
        metadata=meta,
    )
