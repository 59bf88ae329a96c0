from .cv import CvReport, FamilyResult, Selection, default_grid, nested_cv, select_model, selection_gain, svr_grid
from .linear import InsufficientDataError, LinearModel, ZeroColumnWarning, fit_linear, fit_linear_xy
from .metrics import Metrics, compute_metrics
from .modelio import ModelFormatError, SchemaMismatchError, load_model, read_model, save_model, write_model
from .registry import UnsupportedFamilyError, family_names, get_family
from .svr import BACKEND, BACKENDS, ConstantFeatureWarning, SvrModel, fit_svr, fit_svr_xy, solve_dual

__all__ = [
    "BACKEND", "BACKENDS", "ConstantFeatureWarning", "CvReport", "FamilyResult", "InsufficientDataError",
    "LinearModel", "Metrics", "ModelFormatError", "SchemaMismatchError", "Selection", "SvrModel",
    "UnsupportedFamilyError", "ZeroColumnWarning", "compute_metrics", "default_grid", "family_names",
    "fit_linear", "fit_linear_xy", "fit_svr", "fit_svr_xy", "get_family", "load_model", "nested_cv",
    "read_model", "save_model", "select_model", "selection_gain", "solve_dual", "svr_grid", "write_model",
]
