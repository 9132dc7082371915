"""Stability-constrained lifted linear predictor of the residual dynamics.

The lifted state is the standardised augmented vector ``z``; its dynamics
``z+ = A z + B u + E d`` are fitted by weighted block ridge regression, pulled
inside a contraction level ``alpha`` by spectral rescaling, and certified with
a discrete Lyapunov solution ``P`` satisfying ``A' P A - alpha^2 P = -alpha^2 I``.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CertificateError, DomainError
from .lift import StaticCorrector, Standardizer

log = logging.getLogger(__name__)

ALPHA_DEFAULT = 0.995
RESCALE_MARGIN = 1e-6


@dataclass(frozen=True)
class SnapshotSet:
    """Consecutive pairs ``(z_k, z_{k+1})`` with aligned inputs and residuals.

    Rows are snapshots. ``origin`` holds the row index of ``z_k`` in the
    concatenated source series.
    """

    Zm: np.ndarray
    Zp: np.ndarray
    U: np.ndarray
    D: np.ndarray
    E: np.ndarray
    origin: np.ndarray
    counts: tuple = ()

    def __len__(self):
        return self.Zm.shape[0]


def build_snapshots(Z, U, D, E, lengths, t=None) -> SnapshotSet:
    """Pairs within each segment only; ``lengths`` partitions the rows.

    ``t`` (optional) must increase strictly inside every segment.
    """
    Z, U, D, E = (np.asarray(a, dtype=float) for a in (Z, U, D, E))
    U = U.reshape(Z.shape[0], -1)
    D = D.reshape(Z.shape[0], -1)
    E = E.reshape(Z.shape[0], -1)
    lengths = [int(n) for n in lengths]
    if sum(lengths) != Z.shape[0] or not (U.shape[0] == D.shape[0] == E.shape[0] == Z.shape[0]):
        raise DomainError("build_snapshots: segment lengths or row counts do not match")
    idx, counts, start = [], [], 0
    for n in lengths:
        if n < 2:
            warnings.warn(f"segment of length {n} yields no snapshot pairs", stacklevel=2)
        if t is not None and n > 1 and np.any(np.diff(np.asarray(t[start:start + n], dtype=float)) <= 0):
            raise DomainError("build_snapshots: timestamps not strictly increasing within a segment")
        idx.append(np.arange(start, start + max(n - 1, 0)))
        counts.append(max(n - 1, 0))
        start += n
    i = np.concatenate(idx) if idx else np.zeros(0, dtype=int)
    return SnapshotSet(Z[i], Z[i + 1], U[i], D[i], E[i], i, tuple(counts))


@dataclass(frozen=True)
class WeightSpec:
    """Control-consistent sample weighting parameters.

    Outputs are measured in units of ``scale`` (per output), so ``delta`` is a
    margin in those scaled units.
    """

    setpoint: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    scale: np.ndarray
    kappa1: float = 0.5
    kappa2: float = 2.0
    delta: float = 0.5

    def __post_init__(self):
        if self.kappa1 < 0 or self.kappa2 < 0:
            raise DomainError("kappa1 and kappa2 must be >= 0")
        if self.delta <= 0:
            raise DomainError("delta must be > 0")
        if np.any(np.asarray(self.lower) > np.asarray(self.upper)):
            raise DomainError("output lower bound exceeds upper bound")
        if np.any(np.asarray(self.scale) <= 0):
            raise DomainError("output scale must be > 0")

    @classmethod
    def from_outputs(cls, Y, kappa1=0.5, kappa2=2.0, delta=0.5, band=2.0) -> "WeightSpec":
        """Setpoint at the mean, bounds at +-``band`` standard deviations."""
        Y = np.asarray(Y, dtype=float)
        mu, sd = Y.mean(axis=0), Y.std(axis=0)
        sd = np.where(sd > 0, sd, 1.0)
        return cls(mu, mu - band * sd, mu + band * sd, sd, kappa1, kappa2, delta)

    def to_dict(self) -> dict:
        return {k: (np.asarray(v).tolist() if isinstance(v, np.ndarray) else v)
                for k, v in self.__dict__.items()}


def weights(Y, spec: WeightSpec) -> np.ndarray:
    """``w_i = 1 + k1 |dl/dy| + k2 relu(delta - margin(y_i))``.

    ``l`` is the quadratic tracking cost on scaled outputs, so
    ``|dl/dy| = sum_j |2 (y_ij - sp_j) / scale_j|``. The margin is the scaled
    distance to the nearest bound, floored at zero.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    sp, lo, hi, sc = (np.asarray(a, dtype=float) for a in (spec.setpoint, spec.lower, spec.upper, spec.scale))
    grad = np.sum(np.abs(2.0 * (Y - sp) / sc), axis=1)
    margin = np.min(np.minimum(Y - lo, hi - Y) / sc, axis=1)
    margin = np.maximum(margin, 0.0)
    return 1.0 + spec.kappa1 * grad + spec.kappa2 * np.maximum(spec.delta - margin, 0.0)


def spectral_radius(A) -> float:
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0.0
    if A.shape[0] <= 500:
        return float(np.max(np.abs(np.linalg.eigvals(A))))
    return _power_radius(A)


def _power_radius(A, tol=1e-10, max_iter=100000):
    # ||A^k||^(1/k) via repeated squaring-free normalised products
    rng = np.random.default_rng(0)
    x = rng.standard_normal(A.shape[0])
    x /= np.linalg.norm(x)
    prev = 0.0
    logsum, k = 0.0, 0
    for k in range(1, max_iter + 1):
        x = A @ x
        nrm = np.linalg.norm(x)
        if nrm == 0:
            return 0.0
        x /= nrm
        logsum += np.log(nrm)
        est = np.exp(logsum / k)
        if k > 50 and abs(est - prev) < tol * max(est, 1.0):
            return float(est)
        prev = est
    return float(prev)


def certify(A, alpha: float, tol: float = 1e-8, max_doublings: int = 80) -> np.ndarray:
    """Solve ``(A/alpha)' P (A/alpha) - P = -I`` by doubling.

    ``P = sum_k (At')^k At^k`` with ``At = A/alpha``, accumulated as
    ``P <- P + M' P M``, ``M <- M M``. Raises :class:`CertificateError` when
    the series diverges or ``P`` is not positive definite.
    """
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    M = A / alpha
    P = np.eye(n)
    for _ in range(max_doublings):
        P = P + M.T @ P @ M
        M = M @ M
        mn = np.linalg.norm(M)
        if not np.isfinite(mn) or mn > 1e60 or np.abs(P).max() > 1e120:
            raise CertificateError(f"Lyapunov series diverges: rho(A) >= alpha={alpha}")
        if mn < 1e-17:
            break
    else:
        raise CertificateError(f"Lyapunov series did not converge: rho(A) >= alpha={alpha}")
    P = 0.5 * (P + P.T)
    ev = np.linalg.eigvalsh(P)
    if ev[0] <= 0:
        raise CertificateError("certificate matrix P is not positive definite")
    lmi = A.T @ P @ A - alpha ** 2 * P
    worst = float(np.max(np.linalg.eigvalsh(0.5 * (lmi + lmi.T))))
    if worst > tol * max(1.0, ev[-1]):
        raise CertificateError(f"certificate check failed: max eig(A'PA - alpha^2 P) = {worst:.3e}")
    return P


def lmi_residual(A, P, alpha) -> float:
    """Largest eigenvalue of ``A' P A - alpha^2 P``."""
    M = A.T @ P @ A - alpha ** 2 * P
    return float(np.max(np.linalg.eigvalsh(0.5 * (M + M.T))))


def block_ridge(X, Y, lam_cols, W=None) -> np.ndarray:
    """``argmin_K ||W^1/2 (Y - X K')||^2 + sum_j lam_j ||K[:, j]||^2``.

    Weights are normalised to unit mean first, so uniform weights give the
    unweighted fit exactly. Returns ``K`` of shape ``(Y.shape[1], X.shape[1])``.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float).reshape(X.shape[0], -1)
    lam = np.broadcast_to(np.asarray(lam_cols, dtype=float), (X.shape[1],))
    if np.any(lam < 0):
        raise DomainError("ridge strengths must be >= 0")
    if W is None:
        sw = np.ones((X.shape[0], 1))
    else:
        W = np.asarray(W, dtype=float).reshape(-1)
        if W.shape[0] != X.shape[0] or np.any(W <= 0):
            raise DomainError("weights must be positive, one per snapshot")
        sw = np.sqrt(W / W.mean())[:, None]
    Xa = np.vstack([sw * X, np.diag(np.sqrt(lam))])
    Ya = np.vstack([sw * Y, np.zeros((X.shape[1], Y.shape[1]))])
    K, *_ = np.linalg.lstsq(Xa, Ya, rcond=None)
    return K.T


@dataclass(frozen=True)
class Lambdas:
    A: float = 1e-3
    B: float = 1e-3
    E: float = 1e-3
    C: float = 1e3


@dataclass(frozen=True)
class LiftedModel:
    """Identified residual dynamics and output map.

    ``P`` is ``None`` only for models trained with stability enforcement off
    whose spectrum could not be certified.
    """

    A: np.ndarray
    B: np.ndarray
    E: np.ndarray
    C: np.ndarray
    alpha: float
    P: np.ndarray | None
    lambdas: Lambdas = field(default_factory=Lambdas)
    rho_raw: float = float("nan")
    rescaled: bool = False
    kappa: tuple = (0.5, 2.0, 0.5)

    @property
    def rho(self) -> float:
        return spectral_radius(self.A)

    @property
    def certified(self) -> bool:
        return self.P is not None

    def with_output(self, C) -> "LiftedModel":
        return replace(self, C=np.asarray(C, dtype=float))

    def bound_constants(self):
        """``(c1, c2)`` with ``||z_k|| <= c1 alpha^k ||z_0|| + c2 sup ||B u + E d||``."""
        if self.P is None:
            raise CertificateError("model has no stability certificate")
        ev = np.linalg.eigvalsh(self.P)
        c1 = float(np.sqrt(ev[-1] / ev[0]))
        return c1, c1 / (1.0 - self.alpha)

    def to_dict(self) -> dict:
        return {
            "A": self.A.tolist(), "B": self.B.tolist(), "E": self.E.tolist(), "C": self.C.tolist(),
            "alpha": self.alpha, "P": None if self.P is None else self.P.tolist(),
            "lambdas": self.lambdas.__dict__, "rho_raw": self.rho_raw, "rescaled": self.rescaled,
            "kappa": list(self.kappa),
        }

    @classmethod
    def from_dict(cls, d) -> "LiftedModel":
        arr = lambda k: np.asarray(d[k], dtype=float)
        return cls(arr("A"), arr("B"), arr("E"), arr("C"), float(d["alpha"]),
                   None if d["P"] is None else arr("P"), Lambdas(**d["lambdas"]),
                   float(d["rho_raw"]), bool(d["rescaled"]), tuple(d["kappa"]))


def fit(ss: SnapshotSet, w=None, lambdas: Lambdas = Lambdas(), alpha: float = ALPHA_DEFAULT,
        enforce_stability: bool = True, max_projections: int = 5) -> LiftedModel:
    """Weighted ridge fit of ``(A, B, E)`` with optional stability enforcement.

    ``C`` of the returned model is zero-sized; attach it with
    :func:`fit_output` and :meth:`LiftedModel.with_output`.
    """
    n, du, dd = ss.Zm.shape[1], ss.U.shape[1], ss.D.shape[1]
    if len(ss) <= n + du + dd:
        warnings.warn(f"only {len(ss)} snapshots for {n + du + dd} regressors", stacklevel=2)
    X = np.hstack([ss.Zm, ss.U, ss.D])
    lam = np.concatenate([np.full(n, lambdas.A), np.full(du, lambdas.B), np.full(dd, lambdas.E)])
    K = block_ridge(X, ss.Zp, lam, w)
    if np.linalg.cond(X.T @ X + np.diag(lam)) > 1e12:
        log.warning("snapshot regression is ill-conditioned")
    A, B, E = K[:, :n], K[:, n:n + du], K[:, n + du:]
    rho0 = spectral_radius(A)
    rescaled = False
    if enforce_stability:
        target = alpha - RESCALE_MARGIN
        for _ in range(max_projections):
            rho = spectral_radius(A)
            if rho <= target:
                break
            A = A * (target / rho)
            rescaled = True
            if du + dd:
                BE = block_ridge(np.hstack([ss.U, ss.D]), ss.Zp - ss.Zm @ A.T,
                                 lam[n:], w)
                B, E = BE[:, :du], BE[:, du:]
        rho = spectral_radius(A)
        if rho >= alpha:
            raise CertificateError(f"stability projection failed: rho(A)={rho:.6f}")
        P = certify(A, alpha)
    else:
        try:
            P = certify(A, alpha) if rho0 < alpha else None
        except CertificateError:
            P = None
    log.info("lifted fit: n=%d snapshots=%d rho_raw=%.6f rho=%.6f rescaled=%s",
             n, len(ss), rho0, spectral_radius(A), rescaled)
    return LiftedModel(A, B, E, np.zeros((0, n)), alpha, P, lambdas, rho0, rescaled)


def fit_output(ss: SnapshotSet, lam_C: float = 1e-3) -> np.ndarray:
    """Ridge fit of residuals on the lifted state: ``E ~ C Z-``."""
    return block_ridge(ss.Zm, ss.E, lam_C)


def rollout(m: LiftedModel, z0, U, D, H: int | None = None):
    """Iterate ``z+ = A z + B u + E d`` for ``H`` steps.

    Returns ``(Z, e_hat)`` with ``Z`` of shape ``(H + 1, n)`` starting at
    ``z0`` and ``e_hat = Z C'``.
    """
    z = np.asarray(z0, dtype=float).copy()
    U = np.asarray(U, dtype=float).reshape(-1, m.B.shape[1]) if m.B.size else np.zeros((len(U), 0))
    D = np.asarray(D, dtype=float).reshape(-1, m.E.shape[1]) if m.E.size else np.zeros((len(D), 0))
    H = U.shape[0] if H is None else int(H)
    if H < 1 or U.shape[0] < H or D.shape[0] < H:
        raise DomainError("rollout: horizon must be >= 1 and input sequences at least H long")
    if not (np.all(np.isfinite(z)) and np.all(np.isfinite(U[:H])) and np.all(np.isfinite(D[:H]))):
        raise DomainError("rollout: non-finite input")
    Z = np.empty((H + 1, z.size))
    Z[0] = z
    for k in range(H):
        z = m.A @ z + m.B @ U[k] + m.E @ D[k]
        Z[k + 1] = z
    return Z, Z @ m.C.T


@dataclass(frozen=True)
class HybridPredictor:
    """Residual predictor ``g(z) = C z + s(z)`` with an output-bias observer.

    One-step mode: ``e_hat_k = g(z_k) + (e_{k-1} - g(z_{k-1}))`` inside each
    segment, bias zero at the first sample. Multi-step mode rolls ``z``
    through the lifted dynamics from an anchor and holds the anchor bias.
    """

    scaler: Standardizer
    model: LiftedModel
    static: StaticCorrector | None = None
    u_idx: tuple = ()
    d_idx: tuple = ()
    use_dynamic: bool = True
    use_static: bool = True

    def standardize(self, Z_raw) -> np.ndarray:
        return self.scaler.transform(Z_raw)

    def g(self, Zs) -> np.ndarray:
        Zs = np.atleast_2d(Zs)
        out = np.zeros((Zs.shape[0], self.model.C.shape[0]))
        if self.use_dynamic:
            out += Zs @ self.model.C.T
        if self.use_static and self.static is not None:
            out += self.static.predict(Zs)
        return out

    def one_step(self, Zs, e, lengths) -> np.ndarray:
        g = self.g(Zs)
        e = np.asarray(e, dtype=float).reshape(g.shape)
        out = g.copy()
        start = 0
        for n in lengths:
            s = slice(start + 1, start + n)
            out[s] += (e - g)[start:start + n - 1]
            start += n
        return out

    def multi_step(self, Zs, e, lengths, H: int = 20) -> np.ndarray:
        """Open-loop ``H``-step predictions from anchors every ``H`` samples.

        The lifted state is rolled out with measured inputs; the static term
        and the observer bias stay frozen at their anchor values, so the
        prediction is ``e_anchor + C (z_hat_j - z_anchor)``. Segment starts
        fall back to ``g(z)``.
        """
        Zs = np.atleast_2d(np.asarray(Zs, dtype=float))
        e = np.asarray(e, dtype=float).reshape(Zs.shape[0], -1)
        out = self.g(Zs)
        m = self.model
        C = m.C if self.use_dynamic else np.zeros_like(m.C)
        ui, di = list(self.u_idx), list(self.d_idx)
        start = 0
        for n in lengths:
            anchors = np.arange(start, start + n - 1, H)
            z = Zs[anchors].copy()
            frozen = e[anchors] - z @ C.T
            for j in range(1, H + 1):
                prev = anchors + j - 1
                tgt = anchors + j
                live = tgt < start + n
                if not np.any(live):
                    break
                anchors, prev, tgt = anchors[live], prev[live], tgt[live]
                z, frozen = z[live], frozen[live]
                z = z @ m.A.T + Zs[prev][:, ui] @ m.B.T + Zs[prev][:, di] @ m.E.T
                out[tgt] = z @ C.T + frozen
            start += n
        return out

    def to_dict(self) -> dict:
        return {
            "scaler": self.scaler.to_dict(), "model": self.model.to_dict(),
            "static": None if self.static is None else self.static.to_dict(),
            "u_idx": list(self.u_idx), "d_idx": list(self.d_idx),
            "use_dynamic": self.use_dynamic, "use_static": self.use_static,
        }

    @classmethod
    def from_dict(cls, d) -> "HybridPredictor":
        return cls(Standardizer.from_dict(d["scaler"]), LiftedModel.from_dict(d["model"]),
                   None if d["static"] is None else StaticCorrector.from_dict(d["static"]),
                   tuple(d["u_idx"]), tuple(d["d_idx"]), bool(d["use_dynamic"]), bool(d["use_static"]))


def hybrid_predict(y_mech, e_hat) -> np.ndarray:
    """``y_hybrid = y_mech + e_hat``."""
    return np.asarray(y_mech, dtype=float) + np.asarray(e_hat, dtype=float)
