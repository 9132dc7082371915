"""Accuracy and residual-structure diagnostics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import signal

from .errors import DomainError

LB_LAGS = 20
WELCH_SEGMENT = 256
WELCH_OVERLAP = 0.5
FAST_MODE = 0.5
SLOW_MODE = 0.9


def mae_r2(y_true, y_pred):
    """Column-wise MAE and R^2 (``1 - SSE/SST`` about the mean of ``y_true``).

    R^2 is ``nan`` for a column whose truth is constant.
    """
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if y_true.shape != y_pred.shape or y_true.shape[0] == 0:
        raise DomainError("mae_r2: inputs must have equal, nonzero lengths")
    err = y_true - y_pred
    mae = np.mean(np.abs(err), axis=0)
    sse = np.sum(err ** 2, axis=0)
    sst = np.sum((y_true - y_true.mean(axis=0)) ** 2, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = np.where(sst > 0, 1.0 - sse / np.where(sst > 0, sst, 1.0), np.nan)
    if np.ndim(mae) == 0:
        return float(mae), float(r2)
    return mae, r2


def acf(x, max_lag: int) -> np.ndarray:
    """Biased sample autocorrelation ``rho_0..rho_L`` (``rho_0 = 1``)."""
    x = np.asarray(x, dtype=float).ravel()
    n = x.size
    if n <= max_lag:
        raise DomainError(f"acf: series of length {n} too short for {max_lag} lags")
    xc = x - x.mean()
    den = float(xc @ xc)
    if den == 0:
        raise DomainError("acf: zero-variance series")
    out = np.empty(max_lag + 1)
    out[0] = 1.0
    for k in range(1, max_lag + 1):
        out[k] = float(xc[:-k] @ xc[k:]) / den
    return out


@dataclass(frozen=True)
class Spectrum:
    freq: np.ndarray
    power: np.ndarray
    f_cut: float
    low_fraction: float


def psd_welch(x, dt: float = 1.0, segment_len: int = WELCH_SEGMENT,
              overlap: float = WELCH_OVERLAP, f_cut: float | None = None) -> Spectrum:
    """One-sided Welch density estimate with a Hann window.

    ``low_fraction`` is the share of power at frequencies ``<= f_cut``;
    ``f_cut`` defaults to the top of the lowest decade, ``10 / (segment_len dt)``.
    """
    x = np.asarray(x, dtype=float).ravel()
    if not 0 <= overlap < 1:
        raise DomainError("psd_welch: overlap must lie in [0, 1)")
    if segment_len < 2 or x.size < segment_len:
        raise DomainError(f"psd_welch: series of length {x.size} shorter than segment {segment_len}")
    f, pxx = signal.welch(x, fs=1.0 / dt, window="hann", nperseg=segment_len,
                          noverlap=int(overlap * segment_len), detrend="constant",
                          return_onesided=True, scaling="density")
    if f_cut is None:
        f_cut = 10.0 / (segment_len * dt)
    total = float(pxx.sum())
    low = float(pxx[f <= f_cut].sum())
    return Spectrum(f, pxx, float(f_cut), low / total if total > 0 else 0.0)


def _log_prefactor(a, x):
    return a * math.log(x) - x - math.lgamma(a)


def log_gammainc_upper(a: float, x: float) -> float:
    """``log Q(a, x)`` of the regularised upper incomplete gamma function.

    Power series for ``x < a + 1`` (``Q = 1 - P``), Lentz continued fraction
    otherwise. The tail is evaluated in log space, so it stays finite where
    ``Q`` itself underflows.
    """
    if a <= 0:
        raise DomainError("gammainc_upper: a must be > 0")
    if x < 0:
        raise DomainError("gammainc_upper: x must be >= 0")
    if x == 0:
        return 0.0
    if x < a + 1.0:
        term = total = 1.0 / a
        ap = a
        for _ in range(10000):
            ap += 1.0
            term *= x / ap
            total += term
            if abs(term) < abs(total) * 1e-16:
                break
        p = total * math.exp(_log_prefactor(a, x))
        return math.log1p(-p) if p < 1.0 else -math.inf
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 10000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        d = tiny if abs(d) < tiny else d
        c = b + an / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return min(_log_prefactor(a, x) + math.log(h), 0.0)


def gammainc_upper(a: float, x: float) -> float:
    """Regularised upper incomplete gamma ``Q(a, x) = Gamma(a, x) / Gamma(a)``."""
    return math.exp(log_gammainc_upper(a, x))


def chi2_logsf(q: float, dof: int) -> float:
    """Natural log of the chi-square upper tail."""
    if q <= 0:
        return 0.0
    return log_gammainc_upper(0.5 * dof, 0.5 * q)


def chi2_sf(q: float, dof: int) -> float:
    """Upper tail of the chi-square distribution."""
    return math.exp(chi2_logsf(q, dof))


def ljung_box(x, lags: int = LB_LAGS, log_p: bool = False):
    """Ljung-Box ``Q`` and its chi-square p-value with ``lags`` degrees of freedom.

    With ``log_p`` the natural log of the p-value is returned instead, which
    keeps strongly autocorrelated series comparable after ``p`` underflows.
    """
    x = np.asarray(x, dtype=float).ravel()
    n = x.size
    if n <= lags:
        raise DomainError(f"ljung_box: need more than {lags} samples")
    rho = acf(x, lags)[1:]
    k = np.arange(1, lags + 1)
    q = float(n * (n + 2) * np.sum(rho ** 2 / (n - k)))
    return q, (chi2_logsf(q, lags) if log_p else chi2_sf(q, lags))


@dataclass(frozen=True)
class StabilityReport:
    eigenvalues: np.ndarray
    rates: np.ndarray
    fast: np.ndarray
    slow: np.ndarray

    def rows(self):
        """``(re, im, modulus, rate, class)`` sorted by decreasing modulus."""
        out = []
        for lam, r, f, s in zip(self.eigenvalues, self.rates, self.fast, self.slow):
            out.append((float(lam.real), float(lam.imag), float(abs(lam)), float(r),
                        "fast" if f else ("slow" if s else "mid")))
        return out


def stability_report(A, dt: float = 1.0) -> StabilityReport:
    """Eigenvalues of ``A`` and per-mode contraction rates ``-ln|lambda| / dt``."""
    ev = np.linalg.eigvals(np.asarray(A, dtype=float))
    order = np.argsort(-np.abs(ev), kind="stable")
    ev = ev[order]
    mod = np.abs(ev)
    with np.errstate(divide="ignore"):
        rates = np.where(mod > 0, -np.log(np.where(mod > 0, mod, 1.0)) / dt, np.inf)
    return StabilityReport(ev, rates, mod < FAST_MODE, mod > SLOW_MODE)


@dataclass(frozen=True)
class SeriesDiagnostics:
    """Per-output accuracy and residual-structure summary."""

    mae: float
    r2: float
    acf: np.ndarray
    lb_q: float
    lb_p: float
    lb_logp: float
    low_fraction: float
    spectrum: Spectrum

    def summary(self) -> dict:
        return {"mae": self.mae, "r2": self.r2, "lb_q": self.lb_q, "lb_p": self.lb_p,
                "lb_logp": self.lb_logp, "low_fraction": self.low_fraction, "acf1": float(self.acf[1])}


def diagnose(y_true, y_pred, dt: float = 1.0, acf_lags: int = 50, lb_lags: int = LB_LAGS,
             segment_len: int = WELCH_SEGMENT, overlap: float = WELCH_OVERLAP) -> list:
    """One :class:`SeriesDiagnostics` per output column."""
    y_true = np.atleast_2d(np.asarray(y_true, dtype=float).T).T
    y_pred = np.atleast_2d(np.asarray(y_pred, dtype=float).T).T
    mae, r2 = mae_r2(y_true, y_pred)
    out = []
    for j in range(y_true.shape[1]):
        r = y_true[:, j] - y_pred[:, j]
        q, logp = ljung_box(r, lb_lags, log_p=True)
        spec = psd_welch(r, dt, segment_len, overlap)
        out.append(SeriesDiagnostics(float(np.atleast_1d(mae)[j]), float(np.atleast_1d(r2)[j]),
                                     acf(r, acf_lags), q, math.exp(logp), logp,
                                     spec.low_fraction, spec))
    return out
