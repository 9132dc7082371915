import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special, stats

from graybox_dryer import diag
from graybox_dryer.errors import DomainError

AR_PHI = 0.8
LONG_N = 100_000


def ar1(rng, phi, n):
    e = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = e[0] / math.sqrt(1 - phi ** 2)
    for k in range(1, n):
        x[k] = phi * x[k - 1] + e[k]
    return x


def test_mae_r2_hand_values():
    mae, r2 = diag.mae_r2([0.0, 1.0, 2.0], [0.0, 1.0, 1.0])
    assert mae == pytest.approx(1 / 3)
    assert r2 == pytest.approx(0.5)
    y = np.array([3.0, 1.0, 4.0, 1.0, 5.0])
    assert diag.mae_r2(y, y) == (0.0, 1.0)
    assert diag.mae_r2(y, np.full(5, y.mean()))[1] == pytest.approx(0.0)


def test_mae_r2_flags_constant_truth():
    assert math.isnan(diag.mae_r2(np.ones(4), np.zeros(4))[1])
    with pytest.raises(DomainError):
        diag.mae_r2([], [])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), min_size=2, max_size=40))
def test_r2_never_exceeds_one(pairs):
    y, p = np.array(pairs).T
    r2 = diag.mae_r2(y, p)[1]
    assert math.isnan(r2) or r2 <= 1.0 + 1e-12


def test_acf_of_ar1(rng):
    rho = diag.acf(ar1(rng, AR_PHI, LONG_N), 5)
    assert rho[0] == 1.0
    np.testing.assert_allclose(rho[1:], AR_PHI ** np.arange(1, 6), atol=0.02)


def test_acf_of_white_noise():
    # 0.01 is about 3 standard errors at n = 1e5, so a single draw can graze it
    rho = diag.acf(np.random.default_rng(7).standard_normal(LONG_N), 20)
    assert np.all(np.abs(rho[1:]) < 0.01)


def test_acf_errors():
    with pytest.raises(DomainError):
        diag.acf(np.ones(10), 3)
    with pytest.raises(DomainError):
        diag.acf(np.arange(3.0), 3)


def test_psd_sine_peak():
    n, f0 = 4096, 0.125
    x = np.sin(2 * np.pi * f0 * np.arange(n))
    spec = diag.psd_welch(x)
    assert spec.freq[np.argmax(spec.power)] == pytest.approx(f0)


def test_psd_white_noise_is_flat_and_parseval(rng):
    x = rng.standard_normal(256 * 65 // 2 + 128)
    spec = diag.psd_welch(x)
    inner = spec.power[1:-1]
    assert inner.max() / np.median(inner) < 10
    df = spec.freq[1] - spec.freq[0]
    assert spec.power.sum() * df == pytest.approx(x.var(), rel=0.05)
    assert np.all(spec.power >= 0)


def test_psd_low_fraction_separates_drift_from_noise(rng):
    noise = rng.standard_normal(4096)
    drift = np.cumsum(rng.standard_normal(4096)) * 0.1 + noise
    assert diag.psd_welch(drift).low_fraction > diag.psd_welch(noise).low_fraction


def test_psd_errors():
    with pytest.raises(DomainError):
        diag.psd_welch(np.zeros(100))
    with pytest.raises(DomainError):
        diag.psd_welch(np.zeros(1000), overlap=1.0)


@pytest.mark.parametrize("a,x", [(0.5, 0.1), (1.0, 1.0), (2.5, 0.7), (10.0, 12.0), (10.0, 40.0), (3.0, 300.0)])
def test_upper_gamma_matches_scipy(a, x):
    assert diag.gammainc_upper(a, x) == pytest.approx(special.gammaincc(a, x), rel=1e-10, abs=1e-300)


def test_chi2_two_dof_closed_form():
    assert diag.chi2_sf(2.0, 2) == pytest.approx(math.exp(-1.0), rel=1e-12)


def test_log_tail_finite_beyond_underflow():
    # even dof: Q(m, x) = exp(-x) sum_{k<m} x^k / k!, exact and easy to take logs of
    x, m = 2500.0, 10
    oracle = -x + math.log(sum(x ** k / math.factorial(k) for k in range(m)))
    logp = diag.chi2_logsf(2 * x, 2 * m)
    assert math.isfinite(logp)
    assert logp == pytest.approx(oracle, rel=1e-12)


def test_ljung_box_zero_autocorrelation():
    # every lag-1 product of this period-4 wave is zero
    x = np.array([1.0, 0.0, -1.0, 0.0] * 50)
    q, p = diag.ljung_box(x, 1)
    assert q == pytest.approx(0.0, abs=1e-20)
    assert p == 1.0


def test_ljung_box_statistic_formula(rng):
    x = rng.standard_normal(300)
    rho = diag.acf(x, 5)[1:]
    k = np.arange(1, 6)
    q, p = diag.ljung_box(x, 5)
    assert q == pytest.approx(300 * 302 * np.sum(rho ** 2 / (300 - k)), rel=1e-12)
    assert p == pytest.approx(stats.chi2.sf(q, 5), rel=1e-10)


def test_ljung_box_white_noise_monte_carlo():
    rng = np.random.default_rng(2024)
    passes = sum(diag.ljung_box(rng.standard_normal(10_000), 20)[1] > 0.01 for _ in range(100))
    assert passes >= 95


def test_ljung_box_rejects_ar1(rng):
    q, logp = diag.ljung_box(ar1(rng, 0.5, 5000), 20, log_p=True)
    assert logp < math.log(1e-10)


def test_stability_report_cases():
    rep = diag.stability_report(np.diag([0.5, 0.9]))
    assert sorted(np.abs(rep.eigenvalues)) == [0.5, 0.9]
    np.testing.assert_allclose(rep.rates, -np.log([0.9, 0.5]))
    th = 0.3
    R = 0.9 * np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    rep = diag.stability_report(R)
    np.testing.assert_allclose(np.abs(rep.eigenvalues), 0.9)
    assert abs(rep.eigenvalues[0].imag) == pytest.approx(0.9 * math.sin(th))
    classes = [r[4] for r in diag.stability_report(np.diag([0.95, 0.7, 0.2])).rows()]
    assert classes == ["slow", "mid", "fast"]


def test_diagnose_is_pure(rng):
    y = rng.standard_normal((600, 2))
    p = y + 0.1 * rng.standard_normal((600, 2))
    a = [d.summary() for d in diag.diagnose(y, p)]
    b = [d.summary() for d in diag.diagnose(y, p)]
    assert a == b
    assert all(0 <= d["lb_p"] <= 1 for d in a)
