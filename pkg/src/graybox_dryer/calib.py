"""Calibration of the HDT transfer coefficients ``(h_HDT, k_HDT)``.

Bounded Nelder-Mead in box-normalised coordinates, restarted from several
seeded points. Every other model parameter is held at its prior value.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import pbm
from .dataio import Dataset, Y_COLS, convert_units
from .errors import DomainError
from .props import MaterialParams

log = logging.getLogger(__name__)

H_BOUNDS = (10.0, 300.0)
K_BOUNDS = (0.001, 0.2)
TEMP_WEIGHT = 1.0 / 25.0


@dataclass(frozen=True)
class CalibProblem:
    """Box-bounded output-error problem over ``(h_HDT, k_HDT)``."""

    h_bounds: tuple = H_BOUNDS
    k_bounds: tuple = K_BOUNDS
    weights: tuple = (1.0, TEMP_WEIGHT)
    n_starts: int = 5
    max_evals: int = 500
    tol: float = 1e-4
    init_step: float = 0.1
    min_samples: int = 30

    def __post_init__(self):
        for lo, hi in (self.h_bounds, self.k_bounds):
            if not 0 < lo < hi:
                raise DomainError("calibration bounds must satisfy 0 < lo < hi")
        if self.n_starts < 1 or self.max_evals < 3 or self.tol <= 0:
            raise DomainError("n_starts >= 1, max_evals >= 3 and tol > 0 required")

    @property
    def lower(self):
        return np.array([self.h_bounds[0], self.k_bounds[0]])

    @property
    def upper(self):
        return np.array([self.h_bounds[1], self.k_bounds[1]])

    def to_box(self, x):
        return (np.asarray(x, dtype=float) - self.lower) / (self.upper - self.lower)

    def from_box(self, s):
        return self.lower + np.clip(s, 0.0, 1.0) * (self.upper - self.lower)


@dataclass
class StartResult:
    start: np.ndarray
    best: np.ndarray
    f_start: float
    f_best: float
    n_evals: int
    converged: bool
    trace: list = field(default_factory=list)


@dataclass
class CalibResult:
    h_HDT: float
    k_HDT: float
    objective: float
    trace: list
    starts: list
    mae_before: np.ndarray
    mae_after: np.ndarray

    @property
    def converged(self) -> bool:
        return any(s.converged for s in self.starts)

    def apply(self, cfg: pbm.SectionConfig) -> pbm.SectionConfig:
        return cfg.with_hdt(h_HDT=self.h_HDT, k_HDT=self.k_HDT)

    def to_dict(self) -> dict:
        return {
            "h_HDT": self.h_HDT, "k_HDT": self.k_HDT, "objective": self.objective,
            "converged": self.converged,
            "trace": list(map(float, self.trace)),
            "mae_before": dict(zip(Y_COLS, map(float, self.mae_before))),
            "mae_after": dict(zip(Y_COLS, map(float, self.mae_after))),
            "starts": [{"start": s.start.tolist(), "best": s.best.tolist(), "f_start": s.f_start,
                        "f_best": s.f_best, "n_evals": s.n_evals, "converged": s.converged}
                       for s in self.starts],
        }


def pbm_outputs(ds: Dataset, cfg: pbm.SectionConfig, p: MaterialParams) -> pbm.ChainResult:
    """Run the chain on every sample of ``ds`` (measured inputs, model parameters)."""
    x = convert_units(ds.concat())
    return pbm.simulate_inputs(x["T_hot_K"].to_numpy(), x["feed_kgps"].to_numpy(),
                               x["Xin_db"].to_numpy(), x["Tair_K"].to_numpy(),
                               x["RH"].to_numpy(), x["w"].to_numpy(), cfg, p)


class Objective:
    """Weighted mean squared output error; deterministic per parameter point."""

    def __init__(self, data: Dataset, cfg: pbm.SectionConfig, p: MaterialParams,
                 weights=(1.0, TEMP_WEIGHT)):
        df = data.concat()
        self.y = df[list(Y_COLS)].to_numpy(dtype=float)
        self.x = convert_units(df)
        self.cfg = cfg
        self.p = p
        self.w = np.asarray(weights, dtype=float)
        self.n_evals = 0

    def outputs(self, h, k) -> np.ndarray:
        x = self.x
        res = pbm.simulate_inputs(x["T_hot_K"].to_numpy(), x["feed_kgps"].to_numpy(),
                                  x["Xin_db"].to_numpy(), x["Tair_K"].to_numpy(),
                                  x["RH"].to_numpy(), x["w"].to_numpy(),
                                  self.cfg.with_hdt(h_HDT=float(h), k_HDT=float(k)), self.p)
        return res.outputs

    def __call__(self, theta) -> float:
        self.n_evals += 1
        e = self.y - self.outputs(*theta)
        f = float(np.mean(e ** 2 @ self.w))
        return f if np.isfinite(f) else np.inf

    def mae(self, h, k) -> np.ndarray:
        return np.mean(np.abs(self.y - self.outputs(h, k)), axis=0)


def nelder_mead_box(f, s0, tol=1e-4, max_evals=500, step=0.1):
    """Nelder-Mead on the unit box; trial points are projected onto [0, 1]^n.

    Returns ``(best_point, best_value, n_evals, converged, trace)`` where
    ``trace`` is the best value after each iteration (non-increasing).
    Convergence means the simplex diameter fell below ``tol``.
    """
    s0 = np.clip(np.asarray(s0, dtype=float), 0.0, 1.0)
    n = s0.size
    proj = lambda s: np.clip(s, 0.0, 1.0)
    simplex = [s0]
    for i in range(n):
        v = s0.copy()
        v[i] = v[i] + step if v[i] + step <= 1.0 else v[i] - step
        simplex.append(v)
    simplex = np.array(simplex)
    fv = np.array([f(v) for v in simplex])
    evals = n + 1
    trace = [float(fv.min())]

    def diameter(S):
        return max(np.linalg.norm(S[i] - S[j]) for i in range(len(S)) for j in range(i + 1, len(S)))

    converged = False
    while evals < max_evals:
        order = np.argsort(fv, kind="stable")
        simplex, fv = simplex[order], fv[order]
        if diameter(simplex) < tol:
            converged = True
            break
        centroid = simplex[:-1].mean(axis=0)
        xr = proj(centroid + (centroid - simplex[-1]))
        fr = f(xr)
        evals += 1
        if fr < fv[0]:
            xe = proj(centroid + 2.0 * (centroid - simplex[-1]))
            fe = f(xe)
            evals += 1
            simplex[-1], fv[-1] = (xe, fe) if fe < fr else (xr, fr)
        elif fr < fv[-2]:
            simplex[-1], fv[-1] = xr, fr
        else:
            if fr < fv[-1]:
                xc = proj(centroid + 0.5 * (xr - centroid))
            else:
                xc = proj(centroid + 0.5 * (simplex[-1] - centroid))
            fc = f(xc)
            evals += 1
            if fc < min(fr, fv[-1]):
                simplex[-1], fv[-1] = xc, fc
            else:
                for i in range(1, n + 1):
                    simplex[i] = simplex[0] + 0.5 * (simplex[i] - simplex[0])
                    fv[i] = f(simplex[i])
                evals += n
        trace.append(float(fv.min()))
    i = int(np.argmin(fv))
    return simplex[i], float(fv[i]), evals, converged, trace


def start_points(problem: CalibProblem, prior, seed: int) -> np.ndarray:
    """Prior point plus ``n_starts - 1`` uniform draws, in box coordinates."""
    rng = np.random.default_rng(seed)
    pts = [np.clip(problem.to_box(prior), 0.0, 1.0)]
    pts += [rng.uniform(0.0, 1.0, 2) for _ in range(problem.n_starts - 1)]
    return np.array(pts)


def calibrate(problem: CalibProblem, data: Dataset, cfg: pbm.SectionConfig = pbm.SectionConfig(),
              p: MaterialParams = MaterialParams(), seed: int = 0) -> CalibResult:
    """Fit ``(h_HDT, k_HDT)`` to the calibration subset.

    The returned point is the best over all starts, so its objective never
    exceeds the objective at any start point.
    """
    if len(data) < problem.min_samples:
        raise DomainError(f"calibration needs >= {problem.min_samples} samples, got {len(data)}")
    obj = Objective(data, cfg, p, problem.weights)
    g = lambda s: obj(problem.from_box(s))
    prior = np.array([float(np.asarray(cfg.hdt.h_HDT).mean()), float(np.asarray(cfg.hdt.k_HDT).mean())])
    results = []
    for s0 in start_points(problem, prior, seed):
        f0 = g(s0)
        best, fb, n, conv, trace = nelder_mead_box(g, s0, problem.tol, problem.max_evals,
                                                   problem.init_step)
        if fb > f0:
            best, fb = s0, f0
        results.append(StartResult(problem.from_box(s0), problem.from_box(best), f0, fb, n + 1,
                                   conv, trace))
        log.info("calib start %s -> %s f=%.6g evals=%d converged=%s",
                 results[-1].start, results[-1].best, fb, n, conv)
    if not any(r.converged for r in results):
        log.warning("calibration: no start reached simplex diameter < %g", problem.tol)
    k = int(np.argmin([r.f_best for r in results]))
    best = results[k]
    full_trace = np.minimum.accumulate(np.concatenate([r.trace for r in results])).tolist()
    return CalibResult(float(best.best[0]), float(best.best[1]), best.f_best, full_trace, results,
                       obj.mae(*prior), obj.mae(*best.best))
