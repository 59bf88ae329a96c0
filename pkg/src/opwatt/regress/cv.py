"""Nested cross-validation, grid search and model-family selection."""

from __future__ import annotations

import itertools
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from ..segmentation import IntervalSample, design_matrix
from .linear import LinearModel, fit_linear_xy, schema_of
from .svr import SvrModel, Standardizer, fit_svr_xy, kernel_matrix, solve_dual

log = logging.getLogger(__name__)

SVR_SELECTION_GAIN = 0.15
# targets are millisecond-resolved, so a linear RMSE below this is an exact fit
EXACT_FIT_RMSE_S = 1e-6

DEFAULT_C = (0.1, 1.0, 10.0, 100.0)
DEFAULT_EPSILON = (0.5, 1.0, 2.0)
DEFAULT_GAMMA_SCALE = (0.1, 1.0, 10.0)


def svr_grid(
    C: Sequence[float] = DEFAULT_C,
    epsilon: Sequence[float] = DEFAULT_EPSILON,
    kernels: Sequence[str] = ("linear", "rbf"),
    gamma_scale: Sequence[float] = DEFAULT_GAMMA_SCALE,
) -> list[dict[str, Any]]:
    """Hyperparameter grid; rbf ``gamma_scale`` multiplies ``1 / n_features``."""
    grid = []
    for kernel in kernels:
        scales = gamma_scale if kernel == "rbf" else (None,)
        for g, c, e in itertools.product(scales, C, epsilon):
            point = {"kernel": kernel, "C": float(c), "epsilon": float(e)}
            if g is not None:
                point["gamma_scale"] = float(g)
            grid.append(point)
    return grid


def default_grid() -> dict[str, list[dict[str, Any]]]:
    return {"linear": [{}], "svr": svr_grid()}


@dataclass
class FamilyResult:
    fold_rmse: list[float]
    fold_params: list[dict[str, Any]]
    final_params: dict[str, Any] = field(default_factory=dict)

    @property
    def mean_rmse(self) -> float:
        return float(np.mean(self.fold_rmse))

    @property
    def std_rmse(self) -> float:
        return float(np.std(self.fold_rmse, ddof=1)) if len(self.fold_rmse) > 1 else 0.0

    def summary(self) -> dict[str, Any]:
        return {
            "fold_rmse": list(self.fold_rmse),
            "mean_rmse": self.mean_rmse,
            "std_rmse": self.std_rmse,
            "fold_params": list(self.fold_params),
            "final_params": dict(self.final_params),
        }


@dataclass
class CvReport:
    families: dict[str, FamilyResult]
    outer_folds: int = 8
    inner_folds: int = 4
    seed: int = 0
    n: int = 0
    chosen: str | None = None
    selection_gain: float | None = None
    final_models: dict[str, Any] = field(default_factory=dict)

    def mean_rmse(self, family: str) -> float:
        return self.families[family].mean_rmse

    def summary(self) -> dict[str, Any]:
        return {
            "n": self.n,
            "seed": self.seed,
            "outer_folds": self.outer_folds,
            "inner_folds": self.inner_folds,
            "families": {k: v.summary() for k, v in sorted(self.families.items())},
            "chosen": self.chosen,
            "selection_gain": self.selection_gain,
        }


@dataclass
class Selection:
    family: str
    gain: float
    model: LinearModel | SvrModel | None = None


def selection_gain(rmse_linear: float, rmse_svr: float) -> float:
    if rmse_linear <= 0:
        return 0.0
    return (rmse_linear - rmse_svr) / rmse_linear


def select_model(report: CvReport) -> Selection:
    """Prefer the cheaper linear model unless SVR cuts RMSE by more than 15%.

    An exact linear fit is kept regardless: the relative gain over a
    round-off-sized RMSE carries no information.
    """
    if "linear" not in report.families or "svr" not in report.families:
        raise ValueError("model selection needs both linear and svr results")
    rmse_linear = report.mean_rmse("linear")
    gain = selection_gain(rmse_linear, report.mean_rmse("svr"))
    exact = rmse_linear < EXACT_FIT_RMSE_S
    family = "svr" if gain > SVR_SELECTION_GAIN and not exact else "linear"
    model = report.final_models.get(family)
    if model is not None:
        model.metadata["selection_gain"] = gain
        model.metadata["selected_family"] = family
    report.chosen = family
    report.selection_gain = gain
    return Selection(family, gain, model)


def fold_indices(n: int, k: int, rng: np.random.Generator) -> list[np.ndarray]:
    perm = rng.permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


def effective_outer_folds(n: int, outer: int) -> int:
    if n < 16 and outer > max(2, n // 2):
        k = max(2, n // 2)
        warnings.warn(f"only {n} samples: outer folds reduced to {k}", RuntimeWarning, stacklevel=3)
        return k
    return outer


def _rmse(pred: np.ndarray, y: np.ndarray) -> float:
    return float(np.sqrt(np.mean((pred - y) ** 2)))


def _grid_scores(
    X_tr: np.ndarray, y_tr: np.ndarray, X_te: np.ndarray, y_te: np.ndarray,
    family: str, grid: Sequence[dict[str, Any]], schema: Sequence[str],
) -> list[float]:
    """Held-out RMSE for every grid point, reusing kernels across (C, epsilon)."""
    if family == "linear":
        model = fit_linear_xy(X_tr, y_tr, schema)
        return [_rmse(model.predict(X_te), y_te)] * len(grid)
    std = Standardizer.fit(X_tr, schema)
    Z_tr, Z_te = std.transform(X_tr), std.transform(X_te)
    p = max(Z_tr.shape[1], 1)
    scores = [np.nan] * len(grid)
    cache: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}
    for gi, point in enumerate(grid):
        kernel = point["kernel"]
        gamma = point.get("gamma_scale", 1.0) / p if kernel == "rbf" else None
        key = (kernel, gamma)
        if key not in cache:
            cache[key] = (kernel_matrix(Z_tr, Z_tr, kernel, gamma), kernel_matrix(Z_te, Z_tr, kernel, gamma))
        K_tr, K_te = cache[key]
        sol = solve_dual(K_tr, y_tr, point["C"], point["epsilon"])
        scores[gi] = _rmse(K_te @ sol.beta + sol.bias, y_te)
    return scores


def grid_search(
    X: np.ndarray, y: np.ndarray, family: str, grid: Sequence[dict[str, Any]],
    schema: Sequence[str], folds: int, rng: np.random.Generator,
) -> dict[str, Any]:
    """Best grid point by mean held-out RMSE over ``folds`` folds (first wins ties)."""
    if not grid:
        raise ValueError(f"empty hyperparameter grid for {family}")
    if len(grid) == 1:
        return dict(grid[0])
    k = max(2, min(folds, len(y) // 2))
    total = np.zeros(len(grid))
    for test in fold_indices(len(y), k, rng):
        train = np.setdiff1d(np.arange(len(y)), test)
        total += _grid_scores(X[train], y[train], X[test], y[test], family, grid, schema)
    return dict(grid[int(np.argmin(total))])


def fit_family(X: np.ndarray, y: np.ndarray, family: str, params: dict[str, Any], schema, **metadata):
    if family == "linear":
        return fit_linear_xy(X, y, schema, **metadata)
    if family == "svr":
        return fit_svr_xy(X, y, schema, **params, **metadata)
    raise ValueError(f"unknown family {family!r}")


def _outer_task(args):
    X, y, train, test, families, grid, schema, inner, seed, fold = args
    rng = np.random.default_rng(np.random.SeedSequence([seed, fold, 1]))
    out = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for fam in families:
            params = grid_search(X[train], y[train], fam, grid[fam], schema, inner, rng)
            model = fit_family(X[train], y[train], fam, params, schema)
            out[fam] = (_rmse(model.predict(X[test]), y[test]), params)
    return out


def nested_cv(
    samples: Sequence[IntervalSample],
    families: Sequence[str] = ("linear", "svr"),
    grid: dict[str, list[dict[str, Any]]] | None = None,
    outer: int = 8,
    inner: int = 4,
    seed: int = 0,
    schema: Sequence[str] | None = None,
    n_jobs: int = 1,
    refit: bool = True,
) -> CvReport:
    """Outer folds estimate error; inner folds pick hyperparameters.

    Samples are sorted by interval index before the seeded shuffle, so
    the report does not depend on input order. With ``n_jobs > 1`` outer
    folds run in worker processes; results are gathered in fold order
    and equal the serial run.
    """
    schema = list(schema) if schema is not None else schema_of(samples)
    grid = {**default_grid(), **(grid or {})}
    for fam in families:
        if not grid.get(fam):
            raise ValueError(f"empty hyperparameter grid for {fam}")
    ordered = sorted(samples, key=lambda s: s.interval_ref)
    X, y = design_matrix(ordered, schema)
    n = len(y)
    k = effective_outer_folds(n, outer)
    if n < k:
        raise ValueError(f"n={n} is smaller than the {k} outer folds")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    folds = fold_indices(n, k, rng)
    tasks = []
    for f, test in enumerate(folds):
        train = np.setdiff1d(np.arange(n), test)
        tasks.append((X, y, train, test, tuple(families), grid, schema, inner, seed, f))
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_outer_task, tasks))
    else:
        results = [_outer_task(t) for t in tasks]

    report = CvReport({}, outer_folds=k, inner_folds=inner, seed=seed, n=n)
    for fam in families:
        report.families[fam] = FamilyResult([r[fam][0] for r in results], [r[fam][1] for r in results])
    if refit:
        rng_final = np.random.default_rng(np.random.SeedSequence([seed, 2]))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            for fam in families:
                params = grid_search(X, y, fam, grid[fam], schema, inner, rng_final)
                report.families[fam].final_params = params
                report.final_models[fam] = fit_family(X, y, fam, params, schema, seed=int(seed))
    for fam, model in report.final_models.items():
        model.metadata["cv"] = report.families[fam].summary()
    if "linear" in report.families and "svr" in report.families:
        select_model(report)
    return report
