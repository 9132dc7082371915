import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from graybox_dryer import lift
from graybox_dryer.errors import DomainError, RankDeficiencyError

NAMES3 = ("a", "b", "c")


def random_problem(rng, n=20, n_z=3):
    Z = rng.standard_normal((n, n_z))
    dic = lift.Dictionary(tuple(f"z{i}" for i in range(n_z)))
    W = rng.uniform(0.2, 3.0, n)
    return Z, dic, dic.lift(Z), W


def test_residuals_identities():
    y = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.all(lift.residuals(y, y) == 0)
    np.testing.assert_allclose(lift.residuals(y + 0.7, y), 0.7)
    with pytest.raises(DomainError):
        lift.residuals(y, y[:1])


def test_assemble_and_standardize(rng):
    Z = lift.assemble_z(rng.standard_normal((50, 4)), rng.standard_normal((50, 2)), rng.standard_normal((50, 3)))
    assert Z.shape == (50, 9)
    sc = lift.Standardizer.fit(Z[:30])
    assert np.all(np.abs(sc.transform(Z[:30]).mean(axis=0)) < 1e-10)
    # test rows use the training statistics, not their own
    own = lift.Standardizer.fit(Z[30:])
    assert not np.allclose(sc.transform(Z[30:]), own.transform(Z[30:]))
    np.testing.assert_allclose(sc.inverse(sc.transform(Z)), Z, atol=1e-12)
    with pytest.raises(DomainError):
        sc.transform(Z[:, :8])


def test_standardizer_constant_column():
    Z = np.column_stack([np.full(10, 5.0), np.arange(10.0)])
    sc = lift.Standardizer.fit(Z)
    assert sc.std[0] == 1.0 and np.all(sc.transform(Z)[:, 0] == 0)


def test_dictionary_layout():
    dic = lift.Dictionary(NAMES3)
    assert dic.size == 10 and len(dic.feature_names) == 10
    assert lift.Dictionary(tuple("abcdefghijk")).size == 78
    e0 = dic.lift(np.zeros((1, 3)))[0]
    assert e0[0] == 1.0 and np.all(e0[1:] == 0)
    Z = np.array([[2.0, -3.0, 0.5]])
    row = dict(zip(dic.feature_names, dic.lift(Z)[0]))
    assert row["a*b"] == -6.0 and row["c^2"] == 0.25 and row["b"] == -3.0
    assert dic.base.sum() == 4 and not dic.base[4:].any()


def test_dictionary_extra_base():
    dic = lift.Dictionary(NAMES3, ("a^2",))
    assert dic.base.sum() == 5
    with pytest.raises(DomainError):
        lift.Dictionary(NAMES3, ("q",)).base


def test_projection_annihilates_base_and_is_idempotent(rng):
    Z, dic, Phi, W = random_problem(rng, 200)
    Phi_b = Phi[:, dic.base]
    P_b, _ = lift.project_out(Phi_b, Phi_b, W)
    assert np.max(np.abs(P_b)) < 1e-10
    x = rng.standard_normal(200)
    px, _ = lift.project_out(Phi_b, x, W)
    ppx, _ = lift.project_out(Phi_b, px, W)
    np.testing.assert_allclose(ppx, px, atol=1e-10)


def test_projection_on_constant_centres():
    e = np.array([1.0, 4.0, -2.0, 7.0])
    pe, _ = lift.project_out(np.ones((4, 1)), e)
    np.testing.assert_allclose(pe, e - e.mean(), atol=1e-14)


def test_rank_deficient_base_names_columns(rng):
    Z = rng.standard_normal((30, 2))
    Z = np.column_stack([Z, 2.0 * Z[:, 0]])
    dic = lift.Dictionary(NAMES3)
    with pytest.raises(RankDeficiencyError, match="'c'"):
        lift.orthogonalize(dic.lift(Z), np.zeros(30), None, dic.base, dic.feature_names)


def test_ridge_matches_normal_equations(rng):
    Z, dic, Phi, W = random_problem(rng, 20)
    X = Phi[:, ~dic.base]
    Y = rng.standard_normal((20, 2))
    lam = 0.37
    Wn = np.diag(W / W.mean())
    oracle = np.linalg.solve(X.T @ Wn @ X + lam * np.eye(X.shape[1]), X.T @ Wn @ Y).T
    np.testing.assert_allclose(lift.ridge(X, Y, lam, W), oracle, atol=1e-8)


def test_ridge_planted_and_shrinkage(rng):
    X = rng.standard_normal((60, 5))
    c = rng.standard_normal(5)
    np.testing.assert_allclose(lift.ridge(X, X @ c, 1e-10)[0], c, atol=1e-6)
    assert np.max(np.abs(lift.ridge(X, X @ c, 1e12))) < 1e-8
    with pytest.raises(DomainError):
        lift.ridge(X, X @ c, -1.0)


def test_corrector_orthogonal_to_base(rng):
    Z, dic, Phi, W = random_problem(rng, 300)
    e = np.column_stack([np.sin(Z[:, 0] * Z[:, 1]), Z[:, 2] ** 2])
    sc = lift.train_static_corrector(Z, e, dic, W, lam=1e-3)
    pred = sc.predict(Z)
    Phi_b = Phi[:, dic.base]
    assert np.max(np.abs(Phi_b.T @ (W[:, None] * pred))) < 1e-8


def test_constant_shift_leaves_corrector_unchanged(rng):
    Z, dic, Phi, W = random_problem(rng, 100)
    e = Z[:, 0] * Z[:, 1] + 0.1 * rng.standard_normal(100)
    a = lift.train_static_corrector(Z, e, dic, W, 1e-3)
    b = lift.train_static_corrector(Z, e + 5.0, dic, W, 1e-3)
    np.testing.assert_allclose(a.C, b.C, atol=1e-10)


def test_corrector_serialisation_round_trip(rng):
    Z, dic, Phi, W = random_problem(rng, 50)
    sc = lift.train_static_corrector(Z, Z[:, :1] ** 2, dic, W, 1e-2)
    back = lift.StaticCorrector.from_dict(sc.to_dict())
    np.testing.assert_array_equal(back.predict(Z), sc.predict(Z))


def test_without_orthogonalization_uses_raw_features(rng):
    Z, dic, Phi, W = random_problem(rng, 80)
    e = Z[:, 1] ** 2
    sc = lift.train_static_corrector(Z, e, dic, W, 1e-3, orthogonal=False)
    np.testing.assert_allclose(sc.C, lift.ridge(Phi[:, ~dic.base], e, 1e-3, W), atol=1e-12)


def test_select_ridge_uses_tail_holdout(rng):
    X = rng.standard_normal((100, 3))
    y = X @ np.array([1.0, -2.0, 0.5])
    lam, scores = lift.select_ridge(X, y, grid=(1e-6, 1e3))
    assert lam == 1e-6 and len(scores) == 2


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (40, 3), elements=st.floats(-3, 3)), st.floats(0.1, 10.0))
def test_projection_property(Z, wscale):
    dic = lift.Dictionary(NAMES3)
    Phi = dic.lift(Z)
    Phi_b = Phi[:, dic.base]
    if np.linalg.matrix_rank(Phi_b, tol=1e-6) < Phi_b.shape[1] or np.linalg.cond(Phi_b) > 1e6:
        return
    W = np.linspace(1.0, 1.0 + wscale, 40)
    perp, _, proj = lift.orthogonalize(Phi, np.zeros(40), W, dic.base)
    assert np.max(np.abs(Phi_b.T @ (W[:, None] * perp))) < 1e-8 * max(1.0, np.abs(Phi).max() ** 2) * 40
    np.testing.assert_allclose(proj.apply(Phi), perp, atol=1e-9)
