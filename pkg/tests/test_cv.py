import random
import warnings

import numpy as np
import pytest

from opwatt.regress import (
    CvReport,
    FamilyResult,
    LinearModel,
    nested_cv,
    select_model,
    selection_gain,
    svr_grid,
)
from opwatt.regress.cv import default_grid, effective_outer_folds, fold_indices
from opwatt.segmentation import IntervalSample

SMALL = {"svr": svr_grid(C=(10.0, 100.0), epsilon=(0.5,), kernels=("linear", "rbf"), gamma_scale=(1.0,))}


def linear_samples(n=80, seed=0, noise=0.0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 40, (n, 2))
    y = 139.47 - x @ [3.463, 1.1] + (rng.normal(0, noise, n) if noise else 0)
    return [IntervalSample({"A": float(a), "B": float(b)}, float(t), i) for i, ((a, b), t) in enumerate(zip(x, y))]


def report_with(lin, svr):
    return CvReport({"linear": FamilyResult([lin], [{}]), "svr": FamilyResult([svr], [{}])})


def test_default_grid_shape():
    g = default_grid()
    assert g["linear"] == [{}]
    assert len(g["svr"]) == 4 * 3 + 4 * 3 * 3
    assert {p["kernel"] for p in g["svr"]} == {"linear", "rbf"}
    assert all(("gamma_scale" in p) == (p["kernel"] == "rbf") for p in g["svr"])


def test_eighty_samples_eight_folds_of_ten():
    folds = fold_indices(80, 8, np.random.default_rng(0))
    assert [len(f) for f in folds] == [10] * 8
    assert sorted(np.concatenate(folds).tolist()) == list(range(80))
    rep = nested_cv(linear_samples(), grid=SMALL, refit=False)
    assert rep.outer_folds == 8 and len(rep.families["linear"].fold_rmse) == 8


def test_same_seed_identical_report():
    s = linear_samples(noise=2.0)
    a = nested_cv(s, grid=SMALL, seed=3)
    b = nested_cv(s, grid=SMALL, seed=3)
    assert a.summary() == b.summary()
    c = nested_cv(s, grid=SMALL, seed=4)
    assert c.summary() != a.summary()


def test_input_order_invariance():
    s = linear_samples(noise=2.0, seed=1)
    shuffled = s[:]
    random.Random(5).shuffle(shuffled)
    assert nested_cv(s, grid=SMALL, seed=2).summary() == nested_cv(shuffled, grid=SMALL, seed=2).summary()


def test_zero_noise_linear_family_exact():
    rep = nested_cv(linear_samples(), grid=SMALL)
    assert rep.mean_rmse("linear") < 1e-6
    assert rep.mean_rmse("linear") <= rep.mean_rmse("svr") + 0.5
    assert rep.chosen == "linear"
    assert isinstance(rep.final_models["linear"], LinearModel)


def test_small_n_reduces_folds_with_warning():
    with pytest.warns(RuntimeWarning, match="outer folds reduced"):
        rep = nested_cv(linear_samples(12, noise=1.0), grid=SMALL, inner=2)
    assert rep.outer_folds == 6
    assert effective_outer_folds(40, 8) == 8


def test_empty_grid_rejected():
    with pytest.raises(ValueError, match="empty"):
        nested_cv(linear_samples(), grid={"svr": []})


def test_parallel_equals_serial():
    s = linear_samples(48, noise=2.0, seed=7)
    serial = nested_cv(s, grid=SMALL, seed=1, refit=False)
    parallel = nested_cv(s, grid=SMALL, seed=1, refit=False, n_jobs=2)
    assert serial.summary() == parallel.summary()


def test_selection_reference_cases():
    svr = select_model(report_with(17.6, 14.3))
    assert svr.family == "svr" and svr.gain == pytest.approx(0.1875)
    lin = select_model(report_with(26.37, 24.7))
    assert lin.family == "linear" and lin.gain == pytest.approx(0.0633, abs=1e-4)
    assert select_model(report_with(20.0, 20.0)).family == "linear"
    assert select_model(report_with(20.0, 17.0)).family == "linear"


def test_exact_linear_fit_is_kept():
    sel = select_model(report_with(1.6e-7, 0.0))
    assert sel.family == "linear" and sel.gain == pytest.approx(1.0)


@pytest.mark.parametrize("scale", [1e-3, 0.5, 60.0, 1e4])
def test_selection_scale_invariant(scale):
    for lin, svr in [(17.6, 14.3), (26.37, 24.7)]:
        assert select_model(report_with(lin * scale, svr * scale)).family == \
            select_model(report_with(lin, svr)).family
        assert selection_gain(lin * scale, svr * scale) == pytest.approx(selection_gain(lin, svr))


def test_selection_requires_both_families():
    with pytest.raises(ValueError):
        select_model(CvReport({"linear": FamilyResult([1.0], [{}])}))


def test_final_model_metadata():
    rep = nested_cv(linear_samples(noise=1.0), grid=SMALL, seed=9)
    model = rep.final_models[rep.chosen]
    assert model.metadata["seed"] == 9
    assert model.metadata["selected_family"] == rep.chosen
    assert model.metadata["selection_gain"] == rep.selection_gain
    assert model.metadata["cv"]["fold_rmse"] == rep.families[rep.chosen].fold_rmse


def test_std_uses_sample_deviation():
    fr = FamilyResult([1.0, 2.0, 3.0], [{}, {}, {}])
    assert fr.std_rmse == pytest.approx(1.0)
    assert fr.mean_rmse == 2.0
