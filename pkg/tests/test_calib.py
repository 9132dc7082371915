import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graybox_dryer import calib, dataio, pbm
from graybox_dryer.errors import DomainError
from graybox_dryer.props import MaterialParams

H_TRUE, K_TRUE = 90.0, 0.03


@pytest.fixture(scope="module")
def planted():
    """Noise-free data from a plant that differs from the model only in (h, k)."""
    scn = dataio.ScenarioSpec(n_batches=2, samples_per_batch=600).ideal()
    cfg = pbm.SectionConfig().with_hdt(h_HDT=H_TRUE, k_HDT=K_TRUE)
    ds, _ = dataio.gen_synthetic(scn, seed=5, cfg=cfg)
    return dataio.calibration_subset(ds)


def test_nelder_mead_quadratic_minimum():
    f = lambda s: float((s[0] - 0.3) ** 2 + 2.0 * (s[1] - 0.7) ** 2)
    best, fb, n, conv, trace = calib.nelder_mead_box(f, np.array([0.9, 0.1]), tol=1e-6, max_evals=2000)
    assert conv and n <= 2000
    np.testing.assert_allclose(best, [0.3, 0.7], atol=1e-5)
    assert np.all(np.diff(trace) <= 0)


def test_nelder_mead_respects_box():
    f = lambda s: float((s[0] + 1.0) ** 2 + (s[1] - 2.0) ** 2)
    seen = []
    g = lambda s: (seen.append(s.copy()), f(s))[1]
    best, *_ = calib.nelder_mead_box(g, np.array([0.5, 0.5]), max_evals=400)
    assert all(np.all((s >= 0) & (s <= 1)) for s in seen)
    np.testing.assert_allclose(best, [0.0, 1.0], atol=1e-3)


def test_recovers_planted_parameters(planted):
    res = calib.calibrate(calib.CalibProblem(), planted, pbm.SectionConfig(), MaterialParams(), seed=0)
    assert res.h_HDT == pytest.approx(H_TRUE, rel=0.02)
    assert res.k_HDT == pytest.approx(K_TRUE, rel=0.02)
    assert res.converged
    assert np.all(np.diff(res.trace) <= 0)
    assert np.all(res.mae_after <= res.mae_before)


def test_best_never_worse_than_starts(planted):
    res = calib.calibrate(calib.CalibProblem(n_starts=3, max_evals=30), planted, seed=1)
    for s in res.starts:
        assert s.f_best <= s.f_start
        assert res.objective <= s.f_start


def test_only_transfer_coefficients_change(planted):
    cfg = pbm.SectionConfig()
    p = MaterialParams()
    res = calib.calibrate(calib.CalibProblem(n_starts=1, max_evals=20), planted, cfg, p)
    new = res.apply(cfg)
    assert new.conveyor == cfg.conveyor and new.winnower == cfg.winnower
    assert new.hdt.r == cfg.hdt.r and p == MaterialParams()
    assert res.to_dict()["h_HDT"] == new.hdt.h_HDT


def test_objective_deterministic(planted):
    obj = calib.Objective(planted, pbm.SectionConfig(), MaterialParams())
    assert obj((70.0, 0.02)) == obj((70.0, 0.02))
    assert obj.n_evals == 2


def test_too_few_samples():
    small = dataio.Dataset([dataio.gen_synthetic(dataio.ScenarioSpec(n_batches=1, samples_per_batch=10))[0].batches[0]])
    with pytest.raises(DomainError):
        calib.calibrate(calib.CalibProblem(), small)


def test_problem_validation():
    with pytest.raises(DomainError):
        calib.CalibProblem(h_bounds=(300.0, 10.0))


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_box_transform_round_trip(a, b):
    pr = calib.CalibProblem()
    x = pr.from_box(np.array([a, b]))
    assert pr.lower[0] <= x[0] <= pr.upper[0] and pr.lower[1] <= x[1] <= pr.upper[1]
    np.testing.assert_allclose(pr.to_box(x), [a, b], atol=1e-12)
