"""Residual lifting: augmented state assembly, degree-2 polynomial dictionary,
weighted orthogonal projection off the base features, and the static ridge
corrector fitted on the projected data.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import DomainError, RankDeficiencyError

PROXY_NAMES = ("X_HDT", "T_HDT", "X_conv", "T_conv")


def residuals(y_obs, y_mech) -> np.ndarray:
    """``e = y_obs - y_mech`` elementwise."""
    y_obs = np.asarray(y_obs, dtype=float)
    y_mech = np.asarray(y_mech, dtype=float)
    if y_obs.shape != y_mech.shape:
        raise DomainError(f"residuals: shape mismatch {y_obs.shape} vs {y_mech.shape}")
    e = y_obs - y_mech
    if not np.all(np.isfinite(e)):
        raise DomainError("residuals: non-finite values")
    return e


def assemble_z(proxies, u, d) -> np.ndarray:
    """Stack ``[proxies | u | d]`` column-wise. Any block may have zero columns."""
    blocks = []
    for b in (proxies, u, d):
        b = np.asarray(b, dtype=float)
        blocks.append(b[:, None] if b.ndim == 1 else b)
    n = {b.shape[0] for b in blocks if b.size}
    if len(n) > 1:
        raise DomainError(f"assemble_z: row counts differ {sorted(n)}")
    return np.hstack([b for b in blocks if b.size])


@dataclass(frozen=True)
class Standardizer:
    """Column-wise affine scaling frozen from the training rows."""

    names: tuple
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, Z, names=None) -> "Standardizer":
        Z = np.asarray(Z, dtype=float)
        names = tuple(names) if names is not None else tuple(f"z{i}" for i in range(Z.shape[1]))
        if len(names) != Z.shape[1]:
            raise DomainError("Standardizer: names do not match column count")
        mean = Z.mean(axis=0)
        std = Z.std(axis=0)
        # constant columns are centred but not scaled
        std = np.where(std > 1e-12 * np.maximum(1.0, np.abs(mean)), std, 1.0)
        return cls(names, mean, std)

    def transform(self, Z) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        if Z.shape[-1] != len(self.names):
            raise DomainError(f"schema mismatch: expected {len(self.names)} columns, got {Z.shape[-1]}")
        return (Z - self.mean) / self.std

    def inverse(self, Zs) -> np.ndarray:
        return np.asarray(Zs, dtype=float) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"names": list(self.names), "mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Standardizer":
        return cls(tuple(d["names"]), np.asarray(d["mean"], dtype=float), np.asarray(d["std"], dtype=float))


@dataclass(frozen=True)
class Dictionary:
    """Degree-2 monomials ``[1, z_i, z_i^2, z_i z_j (i<j)]`` over named inputs.

    ``base`` flags the columns kept in the base set (constant and linear
    terms by default, plus any ``extra_base`` feature names).
    """

    names: tuple
    extra_base: tuple = ()

    @property
    def n_z(self) -> int:
        return len(self.names)

    @property
    def pairs(self) -> list:
        sq = [(i, i) for i in range(self.n_z)]
        return sq + list(combinations(range(self.n_z), 2))

    @property
    def feature_names(self) -> list:
        out = ["1"] + list(self.names)
        out += [f"{self.names[i]}^2" if i == j else f"{self.names[i]}*{self.names[j]}"
                for i, j in self.pairs]
        return out

    @property
    def size(self) -> int:
        return 1 + self.n_z + self.n_z * (self.n_z + 1) // 2

    @property
    def base(self) -> np.ndarray:
        mask = np.zeros(self.size, dtype=bool)
        mask[: 1 + self.n_z] = True
        names = self.feature_names
        for f in self.extra_base:
            if f not in names:
                raise DomainError(f"unknown base feature {f!r}")
            mask[names.index(f)] = True
        return mask

    def lift(self, Z) -> np.ndarray:
        """Row ``i`` of the result is the dictionary evaluated at ``Z[i]``."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if Z.shape[1] != self.n_z:
            raise DomainError(f"dictionary expects {self.n_z} columns, got {Z.shape[1]}")
        i, j = np.array(self.pairs, dtype=int).T.reshape(2, -1) if self.pairs else (np.zeros(0, int),) * 2
        return np.hstack([np.ones((Z.shape[0], 1)), Z, Z[:, i] * Z[:, j]])


def _check_weights(W, n):
    if W is None:
        return np.ones(n)
    W = np.asarray(W, dtype=float).reshape(-1)
    if W.shape[0] != n or np.any(W <= 0) or not np.all(np.isfinite(W)):
        raise DomainError("sample weights must be finite, positive and one per row")
    return W


@dataclass(frozen=True)
class Projection:
    """Frozen weighted projection ``P = I - Phi_b (Phi_b' W Phi_b)^-1 Phi_b' W``.

    ``gamma`` maps base features to their W-least-squares coefficients for
    the residual features, so new rows are projected with the training fit.
    """

    base_mask: np.ndarray
    gamma: np.ndarray

    def apply(self, Phi) -> np.ndarray:
        Phi = np.asarray(Phi, dtype=float)
        return Phi[:, ~self.base_mask] - Phi[:, self.base_mask] @ self.gamma


def _weighted_qr(Phi_b, W, names=None, rtol=1e-10):
    sw = np.sqrt(W)[:, None]
    Q, R = np.linalg.qr(sw * Phi_b, mode="reduced")
    diag = np.abs(np.diag(R))
    scale = np.linalg.norm(sw * Phi_b, axis=0)
    bad = np.flatnonzero(diag <= rtol * np.maximum(scale, 1e-300))
    if bad.size:
        labels = [names[b] if names is not None else f"column {b}" for b in bad]
        raise RankDeficiencyError(
            f"base features are linearly dependent: {labels}; drop duplicated columns")
    return Q, R, sw


def project_out(Phi_b, X, W=None, names=None) -> tuple:
    """``P_perp X`` and the coefficients ``G`` with ``P_perp X = X - Phi_b G``."""
    Phi_b = np.asarray(Phi_b, dtype=float)
    X = np.asarray(X, dtype=float)
    W = _check_weights(W, Phi_b.shape[0])
    Q, R, sw = _weighted_qr(Phi_b, W, names)
    G = np.linalg.solve(R, Q.T @ (sw * (X if X.ndim == 2 else X[:, None])))
    G = G if X.ndim == 2 else G[:, 0]
    return X - Phi_b @ G, G


def orthogonalize(Phi, e, W=None, base_mask=None, names=None):
    """Project residual features and residuals off the base features.

    Returns ``(Phi_res_perp, e_perp, projection)``.
    """
    Phi = np.asarray(Phi, dtype=float)
    if base_mask is None:
        raise DomainError("orthogonalize: base_mask required")
    base_mask = np.asarray(base_mask, dtype=bool)
    bnames = None if names is None else [n for n, b in zip(names, base_mask) if b]
    Phi_b = Phi[:, base_mask]
    W = _check_weights(W, Phi.shape[0])
    Q, R, sw = _weighted_qr(Phi_b, W, bnames)
    both = np.hstack([Phi[:, ~base_mask], np.asarray(e, dtype=float).reshape(Phi.shape[0], -1)])
    G = np.linalg.solve(R, Q.T @ (sw * both))
    perp = both - Phi_b @ G
    n_res = int((~base_mask).sum())
    proj = Projection(base_mask.copy(), G[:, :n_res])
    e_perp = perp[:, n_res:]
    return perp[:, :n_res], (e_perp if np.ndim(e) == 2 else e_perp[:, 0]), proj


def ridge(X, Y, lam, W=None) -> np.ndarray:
    """Coefficients ``C`` minimising ``||Y - X C'||_W^2 + lam ||C||_F^2``.

    ``W`` is rescaled to unit mean, so ``lam`` keeps its meaning under any
    overall weight scale. Solved as an augmented least-squares problem.
    Returns ``C`` with shape ``(Y.shape[1], X.shape[1])``.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    Y2 = Y.reshape(X.shape[0], -1)
    if lam < 0:
        raise DomainError("ridge strength must be >= 0")
    W = _check_weights(W, X.shape[0])
    sw = np.sqrt(W / W.mean())[:, None]
    n = X.shape[1]
    Xa = np.vstack([sw * X, np.sqrt(lam) * np.eye(n)])
    Ya = np.vstack([sw * Y2, np.zeros((n, Y2.shape[1]))])
    C, *_ = np.linalg.lstsq(Xa, Ya, rcond=None)
    return C.T


def fit_static_corrector(Phi_res_perp, e_perp, lam: float = 1e-3, W=None) -> np.ndarray:
    """Weighted ridge fit of the projected residuals on the projected features."""
    return ridge(Phi_res_perp, e_perp, lam, W)


def select_ridge(Phi_res, e, W=None, grid=(1e-6, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0),
                 holdout: float = 0.2):
    """Pick the ridge strength with the lowest weighted error on the last
    ``holdout`` fraction of rows (time-ordered; no shuffling)."""
    n = Phi_res.shape[0]
    cut = int(round(n * (1 - holdout)))
    if cut < 1 or cut >= n:
        raise DomainError("select_ridge: holdout leaves an empty fit or validation block")
    W = _check_weights(W, n)
    e2 = np.asarray(e, dtype=float).reshape(n, -1)
    scores = []
    for lam in grid:
        C = ridge(Phi_res[:cut], e2[:cut], lam, W[:cut])
        r = e2[cut:] - Phi_res[cut:] @ C.T
        scores.append(float(np.sum(W[cut:, None] * r ** 2)))
    return float(grid[int(np.argmin(scores))]), scores


@dataclass(frozen=True)
class StaticCorrector:
    """``e_hat(z) = C (Psi_res(z) - Psi_base(z) Gamma)``; with ``orthogonal``
    off the projection is skipped and ``C`` acts on raw residual features."""

    dictionary: Dictionary
    projection: Projection
    C: np.ndarray
    lam: float
    orthogonal: bool = True

    def features(self, Zs) -> np.ndarray:
        Phi = self.dictionary.lift(Zs)
        if self.orthogonal:
            return self.projection.apply(Phi)
        return Phi[:, ~self.projection.base_mask]

    def predict(self, Zs) -> np.ndarray:
        return self.features(Zs) @ self.C.T

    def to_dict(self) -> dict:
        return {
            "names": list(self.dictionary.names), "extra_base": list(self.dictionary.extra_base),
            "base_mask": self.projection.base_mask.astype(int).tolist(),
            "gamma": self.projection.gamma.tolist(), "C": self.C.tolist(),
            "lam": self.lam, "orthogonal": self.orthogonal,
        }

    @classmethod
    def from_dict(cls, d) -> "StaticCorrector":
        dic = Dictionary(tuple(d["names"]), tuple(d["extra_base"]))
        proj = Projection(np.asarray(d["base_mask"], dtype=bool), np.asarray(d["gamma"], dtype=float))
        return cls(dic, proj, np.asarray(d["C"], dtype=float), float(d["lam"]), bool(d["orthogonal"]))


def train_static_corrector(Zs, e, dictionary: Dictionary, W=None, lam: float = 1e-3,
                           orthogonal: bool = True) -> StaticCorrector:
    """Lift, project (unless disabled) and fit in one call."""
    Phi = dictionary.lift(Zs)
    Phi_perp, e_perp, proj = orthogonalize(Phi, e, W, dictionary.base, dictionary.feature_names)
    if orthogonal:
        C = fit_static_corrector(Phi_perp, e_perp, lam, W)
    else:
        C = fit_static_corrector(Phi[:, ~dictionary.base], e, lam, W)
    return StaticCorrector(dictionary, proj, C, float(lam), orthogonal)
