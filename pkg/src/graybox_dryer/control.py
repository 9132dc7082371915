"""Closed-loop MPC evaluation: condensed linear predictors, a Hildreth QP
solver, three controllers (mechanistic, ext-input residual, hybrid) and the
truth-plant harness that scores them.

The manipulated variable is the hot-air temperature ``T_hot`` [C]; feed rate
is held. Only outlet moisture is tracked.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
import pandas as pd

from . import dataio, pbm
from .dataio import D_COLS, TruthPlant, convert_units
from .edmdcs import HybridPredictor
from .errors import ConfigError, DomainError, InfeasibleError, InstabilityError, NumericalError
from .props import MaterialParams

log = logging.getLogger(__name__)

MOIST = 0
T_IDX = 0


@dataclass(frozen=True)
class MpcConfig:
    """Horizons, weights and constraints. Moisture in %wb, ``T_hot`` in C."""

    N_p: int = 20
    N_c: int = 5
    dt: float = 1.0
    Q: float = 100.0
    R: float = 0.1
    u_min: float = 110.0
    u_max: float = 190.0
    du_max: float = 2.0
    band: float = 0.5
    fd_step: float = 1.0
    qp_tol: float = 1e-8
    qp_max_iter: int = 500

    def __post_init__(self):
        if self.N_p < 1 or self.N_c < 1 or self.N_c > self.N_p:
            raise ConfigError("horizons must satisfy 1 <= N_c <= N_p")
        if not self.u_min < self.u_max:
            raise ConfigError("u_min must be below u_max")
        if self.Q < 0 or self.R <= 0:
            raise ConfigError("Q must be >= 0 and R > 0")
        if self.du_max <= 0 or self.band <= 0 or self.dt <= 0 or self.fd_step <= 0:
            raise ConfigError("du_max, band, dt and fd_step must be > 0")

    @classmethod
    def from_dict(cls, d) -> "MpcConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown mpc keys: {sorted(unknown)}")
        return cls(**d)


# --------------------------------------------------------------------------
# Condensed prediction

@dataclass(frozen=True)
class LinearPredictor:
    """``x+ = A x + B u + E d``, ``y+ = C x+ + D u + c``.

    The output at step ``j+1`` sees the input applied at step ``j`` both
    through the state and through the direct term ``D``.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray | None = None
    E: np.ndarray | None = None
    c: np.ndarray | None = None

    def __post_init__(self):
        n, m, p = self.A.shape[0], self.B.shape[1], self.C.shape[0]
        object.__setattr__(self, "D", np.zeros((p, m)) if self.D is None else np.atleast_2d(self.D))
        object.__setattr__(self, "E", np.zeros((n, 0)) if self.E is None else np.atleast_2d(self.E))
        object.__setattr__(self, "c", np.zeros(p) if self.c is None else np.asarray(self.c, dtype=float))

    def step(self, x, u, d=None):
        d = np.zeros(self.E.shape[1]) if d is None else d
        x1 = self.A @ x + self.B @ u + self.E @ d
        return x1, self.C @ x1 + self.D @ u + self.c


@dataclass(frozen=True)
class Condensed:
    """Stacked prediction ``Y = F x0 + G U + H Dvec + h``."""

    F: np.ndarray
    G: np.ndarray
    H: np.ndarray
    h: np.ndarray

    def predict(self, x0, U, Dvec=None):
        Dvec = np.zeros(self.H.shape[1]) if Dvec is None else Dvec
        return self.F @ x0 + self.G @ np.ravel(U) + self.H @ np.ravel(Dvec) + self.h


def predict_matrices(model: LinearPredictor, N_p: int) -> Condensed:
    """Exact condensation of ``model`` over ``N_p`` steps."""
    if N_p < 1:
        raise DomainError("N_p must be >= 1")
    A, B, C, D, E = model.A, model.B, model.C, model.D, model.E
    n, m, p, q = A.shape[0], B.shape[1], C.shape[0], E.shape[1]
    F = np.zeros((N_p * p, n))
    G = np.zeros((N_p * p, N_p * m))
    H = np.zeros((N_p * p, N_p * q))
    powers = [np.eye(n)]
    for _ in range(N_p):
        powers.append(A @ powers[-1])
    for j in range(N_p):
        rows = slice(j * p, (j + 1) * p)
        F[rows] = C @ powers[j + 1]
        for i in range(j + 1):
            CA = C @ powers[j - i]
            G[rows, i * m:(i + 1) * m] = CA @ B
            H[rows, i * q:(i + 1) * q] = CA @ E
        G[rows, j * m:(j + 1) * m] += D
    return Condensed(F, G, H, np.tile(model.c, N_p))


# --------------------------------------------------------------------------
# QP

@dataclass(frozen=True)
class QpResult:
    x: np.ndarray
    lam: np.ndarray
    iterations: int
    converged: bool
    kkt: float


def kkt_residual(Hm, f, Ai, b, x, lam) -> float:
    """Max of stationarity, primal feasibility and complementarity violations.

    Each term is relative to the size of the data it is built from, so the
    tolerance means the same thing for a QP whose gradient is ``1e7`` as
    for one whose gradient is ``1``.
    """
    g = Hm @ x + f
    stat = g + (Ai.T @ lam if Ai.size else 0.0)
    s = b - Ai @ x if Ai.size else np.zeros(0)
    sg = 1.0 + np.max(np.abs(f), initial=0.0) + np.max(np.abs(Hm @ x), initial=0.0)
    sb = 1.0 + np.max(np.abs(b), initial=0.0)
    parts = [np.max(np.abs(stat), initial=0.0) / sg, np.max(-s, initial=0.0) / sb,
             np.max(np.abs(lam * s), initial=0.0) / (sg * sb), np.max(-lam, initial=0.0) / sg]
    return float(max(parts))


def solve_qp(Hm, f, Ai=None, b=None, tol: float = 1e-8, max_iter: int = 500) -> QpResult:
    """``min 1/2 x'Hx + f'x`` s.t. ``Ai x <= b`` by Hildreth dual coordinate ascent.

    ``H`` must be symmetric positive definite. Iterates whole sweeps until
    the KKT residual drops below ``tol`` or ``max_iter`` sweeps pass.
    """
    Hm = np.asarray(Hm, dtype=float)
    f = np.asarray(f, dtype=float)
    try:
        L = np.linalg.cholesky(Hm)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("QP Hessian is not positive definite") from exc
    Hinv = lambda v: np.linalg.solve(L.T, np.linalg.solve(L, v))
    x_unc = -Hinv(f)
    if Ai is None or np.size(Ai) == 0:
        z = np.zeros(0)
        return QpResult(x_unc, z, 0, True, kkt_residual(Hm, f, np.zeros((0, f.size)), z, x_unc, z))
    Ai = np.atleast_2d(np.asarray(Ai, dtype=float))
    b = np.asarray(b, dtype=float)
    if np.all(Ai @ x_unc <= b):
        z = np.zeros(b.size)
        return QpResult(x_unc, z, 0, True, kkt_residual(Hm, f, Ai, b, x_unc, z))
    HinvAt = Hinv(Ai.T)
    P = Ai @ HinvAt
    d = b + Ai @ Hinv(f)
    lam = np.zeros(b.size)
    it, res = 0, np.inf
    for it in range(1, max_iter + 1):
        for i in range(b.size):
            w = -(d[i] + P[i] @ lam - P[i, i] * lam[i]) / P[i, i]
            lam[i] = max(0.0, w)
        x = x_unc - HinvAt @ lam
        res = kkt_residual(Hm, f, Ai, b, x, lam)
        if res <= tol:
            break
    x = x_unc - HinvAt @ lam
    if res > tol:
        x, lam, res = _polish(Hm, f, Ai, b, lam, x, res, tol)
    return QpResult(x, lam, it, res <= tol, res)


def _independent(Aw, row) -> bool:
    M = np.vstack([Aw, row]) if len(Aw) else row[None, :]
    return np.linalg.matrix_rank(M) == M.shape[0]


def _polish(Hm, f, Ai, b, lam, x, res, tol, max_iter: int = 100):
    """Active-set refinement seeded with the Hildreth multipliers.

    Dual coordinate ascent crawls when several dependent constraints bind
    together. Starting from the rows Hildreth marks active (largest
    multipliers first, dependent rows skipped), this solves the
    equality-constrained KKT system and repairs the set one row at a time.
    Returns whichever iterate has the smaller KKT residual.
    """
    n = f.size
    active: list = []
    for j in np.argsort(-lam, kind="stable"):
        if lam[j] > 0 and _independent(Ai[active], Ai[j]):
            active.append(int(j))
    best = (x, lam, res)
    for _ in range(max_iter):
        k = len(active)
        Aw = Ai[active]
        K = np.block([[Hm, Aw.T], [Aw, np.zeros((k, k))]])
        sol = np.linalg.solve(K, np.concatenate([-f, b[active]]))
        xw, lw = sol[:n], sol[n:]
        lam_full = np.zeros(b.size)
        lam_full[active] = np.maximum(lw, 0.0)
        r = kkt_residual(Hm, f, Ai, b, xw, lam_full)
        if r < best[2]:
            best = (xw, lam_full, r)
        if r <= tol:
            break
        if k and lw.min() < 0:
            active.pop(int(np.argmin(lw)))
            continue
        viol = Ai @ xw - b
        j = int(np.argmax(viol))
        if viol[j] <= 0:
            break
        if not _independent(Aw, Ai[j]):
            # swap out the row whose multiplier runs out first along the
            # direction that brings row j in
            c = np.linalg.lstsq(Aw.T, Ai[j], rcond=None)[0]
            pos = c > 1e-12
            if not pos.any():
                break
            ratio = np.where(pos, lw / np.where(pos, c, 1.0), np.inf)
            active.pop(int(np.argmin(ratio)))
        active.append(j)
    return best


def move_constraints(u_prev: float, cfg: MpcConfig):
    """``Ai dU <= b`` for box and rate limits on ``N_c`` scalar moves."""
    n = cfg.N_c
    T = np.tril(np.ones((n, n)))
    I = np.eye(n)
    Ai = np.vstack([T, -T, I, -I])
    b = np.concatenate([np.full(n, cfg.u_max - u_prev), np.full(n, u_prev - cfg.u_min),
                        np.full(n, cfg.du_max), np.full(n, cfg.du_max)])
    return Ai, b


def check_feasible(u_prev: float, cfg: MpcConfig):
    """The first move must reach the box: name the binding pair otherwise."""
    if u_prev > cfg.u_max + cfg.du_max:
        raise InfeasibleError(f"u_max={cfg.u_max} unreachable from u={u_prev:.3f} "
                              f"under rate limit du_max={cfg.du_max}")
    if u_prev < cfg.u_min - cfg.du_max:
        raise InfeasibleError(f"u_min={cfg.u_min} unreachable from u={u_prev:.3f} "
                              f"under rate limit du_max={cfg.du_max}")


def move_matrix(cfg: MpcConfig) -> np.ndarray:
    """Maps ``N_c`` moves to ``N_p`` absolute-input offsets (held after ``N_c``)."""
    S = np.zeros((cfg.N_p, cfg.N_c))
    for j in range(cfg.N_p):
        S[j, :min(j + 1, cfg.N_c)] = 1.0
    return S


def plan_moves(cond: Condensed, x0, u_prev: float, sp, cfg: MpcConfig, Dvec=None) -> QpResult:
    """Optimal moves for a scalar input and single tracked output."""
    check_feasible(u_prev, cfg)
    S = move_matrix(cfg)
    GS = cond.G @ S
    free = cond.predict(x0, np.full(cfg.N_p, u_prev), Dvec)
    err0 = free - np.asarray(sp, dtype=float)
    Hm = 2.0 * (cfg.Q * GS.T @ GS + cfg.R * np.eye(cfg.N_c))
    f = 2.0 * cfg.Q * GS.T @ err0
    Ai, b = move_constraints(u_prev, cfg)
    return solve_qp(Hm, f, Ai, b, cfg.qp_tol, cfg.qp_max_iter)


def apply_first_move(u_prev: float, du: float, cfg: MpcConfig) -> float:
    """Projects the first move onto the box and rate set so both hold exactly."""
    lo = max(cfg.u_min, u_prev - cfg.du_max)
    hi = min(cfg.u_max, u_prev + cfg.du_max)
    return float(min(max(u_prev + du, lo), hi))


# --------------------------------------------------------------------------
# Controllers

def _request(T_hot_C, feed_kgph, d, cfg: pbm.SectionConfig, p: MaterialParams) -> dict:
    row = {"T_hot_C": T_hot_C, "feed_kgph": feed_kgph}
    row.update(dict(zip(D_COLS, map(float, d))))
    x = convert_units(row)
    return {"T_hot_K": x["T_hot_K"], "feed_kgps": x["feed_kgps"], "Xin_db": x["Xin_db"],
            "Tair_K": x["Tair_K"], "RH": x["RH"], "w": x["w"],
            "h_HDT": float(np.mean(cfg.hdt.h_HDT)), "k_HDT": float(np.mean(cfg.hdt.k_HDT)),
            "theta_xe1": float(np.mean(p.theta_xe1))}


class MechanisticController:
    """MPC on a finite-difference linearisation of the mechanistic model.

    The model is static in ``T_hot`` and has no output feedback.
    """

    name = "pbm"

    def __init__(self, cfg: pbm.SectionConfig, p: MaterialParams, mpc: MpcConfig):
        self.cfg, self.p, self.mpc = cfg, p, mpc

    def requests(self, T_prev, feed, d_meas) -> list:
        return [_request(T_prev, feed, d_meas, self.cfg, self.p),
                _request(T_prev + self.mpc.fd_step, feed, d_meas, self.cfg, self.p)]

    def linearise(self, evals):
        base, pert = evals
        y0 = base.outputs[0]
        K = (pert.outputs[0] - y0) / self.mpc.fd_step
        return y0, K

    def predictor(self, evals, T_prev, d_meas, y_meas):
        y0, K = self.linearise(evals)
        model = LinearPredictor(np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((1, 1)),
                                D=[[K[MOIST]]], c=[y0[MOIST] - K[MOIST] * T_prev])
        return model, np.zeros(1)

    def observe(self, evals, T_prev, d_meas, y_meas):
        pass


class LiftedController(MechanisticController):
    """MPC on ``PBM linearisation + lifted residual dynamics + bias``.

    State ``x = [z; T_prev]`` (standardised ``z``); ``z`` is re-anchored each
    step from the mechanistic proxies of the last applied input and the
    measured disturbances; the bias closes the loop on the measured residual.
    """

    def __init__(self, name, predictor: HybridPredictor, inputs: str, cfg, p, mpc: MpcConfig,
                 feed_kgph: float):
        super().__init__(cfg, p, mpc)
        self.name = name
        self.hp = predictor
        self.inputs = inputs
        self.feed = feed_kgph

    def z_raw(self, base_result, T_prev, d_meas):
        u = np.array([T_prev, self.feed])
        d = np.asarray(d_meas, dtype=float)
        parts = [base_result.proxies[0]] if self.inputs == "full" else []
        return np.concatenate(parts + [u, d])

    def predictor(self, evals, T_prev, d_meas, y_meas):
        y0, K = self.linearise(evals)
        hp, m = self.hp, self.hp.model
        zs = hp.standardize(self.z_raw(evals[0], T_prev, d_meas)[None, :])[0]
        g = hp.g(zs[None, :])[0]
        e = np.asarray(y_meas) - y0
        bias = e - g
        # frozen static term plus bias; the dynamic term is carried by the state
        s_term = g - (m.C @ zs if hp.use_dynamic else 0.0)
        const_y = y0 + s_term + bias
        ti, fi = hp.u_idx[T_IDX], hp.u_idx[1]
        mu, sd = hp.scaler.mean, hp.scaler.std
        n = m.A.shape[0]
        bT = m.B[:, 0] / sd[ti]
        w = (m.B[:, 0] * (-mu[ti] / sd[ti]) + m.B[:, 1] * zs[fi] + m.E @ zs[list(hp.d_idx)])
        A = np.zeros((n + 1, n + 1))
        A[:n, :n] = m.A
        A[:n, n] = bT
        B = np.zeros((n + 1, 1))
        B[n, 0] = 1.0
        Cm = np.zeros((1, n + 1))
        if hp.use_dynamic:
            Cm[0, :n] = m.C[MOIST]
        E = np.zeros((n + 1, 1))
        E[:n, 0] = w
        c = const_y[MOIST] - K[MOIST] * T_prev
        model = LinearPredictor(A, B, Cm, D=[[K[MOIST]]], E=E, c=[c])
        return model, np.concatenate([zs, [T_prev]])


# --------------------------------------------------------------------------
# Scenario and harness

@dataclass(frozen=True)
class MpcScenario:
    """Setpoint steps and disturbances for one closed-loop run.

    ``setpoint0=None`` uses the plant's noise-free initial output.
    """

    steps: int = 1000
    T_hot0: float = 160.0
    feed_kgph: float = 6600.0
    d0: tuple = (21.0, 30.0, 0.4, 0.018, 6750.0)
    setpoint0: float | None = None
    sp_steps: tuple = ((200, 0.5), (400, 0.0))
    xin_step_at: int = 600
    xin_step: float = 1.0
    t_start: float = 2000.0
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")

    def setpoints(self, sp0: float) -> np.ndarray:
        sp = np.full(self.steps, sp0)
        for k, off in self.sp_steps:
            sp[int(k):] = sp0 + off
        return sp

    def true_disturbance(self, k) -> np.ndarray:
        d = np.array(self.d0, dtype=float)
        if k >= self.xin_step_at:
            d[0] += self.xin_step
        return d

    def measured_disturbance(self, k) -> np.ndarray:
        return np.array(self.d0, dtype=float)

    @classmethod
    def from_dict(cls, d) -> "MpcScenario":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown mpc scenario keys: {sorted(unknown)}")
        kw = dict(d)
        if "d0" in kw:
            kw["d0"] = tuple(kw["d0"])
        if "sp_steps" in kw:
            kw["sp_steps"] = tuple(tuple(s) for s in kw["sp_steps"])
        return cls(**kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["d0"] = list(self.d0)
        d["sp_steps"] = [list(s) for s in self.sp_steps]
        return d


@dataclass
class MpcReport:
    """Trajectories and closed-loop metrics for each controller."""

    trajectories: dict
    metrics: dict
    aborted: dict = field(default_factory=dict)

    def table(self) -> pd.DataFrame:
        rows = [{"model": k, **v} for k, v in self.metrics.items()]
        return pd.DataFrame(rows, columns=["model", "IAE", "effort", "violation_pct", "steps"])


def metrics(traj: pd.DataFrame, cfg: MpcConfig) -> dict:
    err = np.abs(traj["y_moist"].to_numpy() - traj["setpoint"].to_numpy())
    du = traj["du"].to_numpy()
    return {"IAE": float(np.sum(err) * cfg.dt), "effort": float(np.sum(du ** 2)),
            "violation_pct": float(100.0 * np.mean(err > cfg.band)) if len(err) else 0.0,
            "steps": int(len(err))}


class _Loop:
    def __init__(self, ctrl, plant: TruthPlant, T0):
        self.ctrl, self.plant = ctrl, plant
        self.T_prev = T0
        self.rows = []
        self.alive = True


def run_closed_loop(controllers: list, truth: dataio.TruthParams, scenario: MpcScenario = MpcScenario(),
                    mpc: MpcConfig = MpcConfig(), plant_cfg: pbm.SectionConfig = pbm.SectionConfig(),
                    plant_p: MaterialParams = MaterialParams(), fouling_depth: float = 0.0) -> MpcReport:
    """Simulate every controller against its own copy of the truth plant.

    Each step makes a single vectorised chain call holding the plant
    evaluations of all loops plus the linearisation points of the next step.
    A loop whose plant or model blows up is stopped and reported as aborted.
    """
    loops = [_Loop(c, TruthPlant(truth, plant_cfg, plant_p, mpc.dt, fouling_depth, scenario.t_start,
                                 scenario.seed, T_hot0=scenario.T_hot0), scenario.T_hot0)
             for c in controllers]
    feed = scenario.feed_kgph
    # initial measurement and linearisation at the starting point
    d_true = scenario.true_disturbance(0)
    d_meas = scenario.measured_disturbance(0)
    reqs, slots = [], []
    for lp in loops:
        reqs.append(lp.plant.request((lp.T_prev, feed), d_true))
        mr = lp.ctrl.requests(lp.T_prev, feed, d_meas)
        slots.append((len(reqs), len(reqs) + len(mr)))
        reqs += mr
    res = dataio.evaluate_requests_full(reqs, plant_cfg, plant_p)
    y_clean0 = res.outputs[0]
    sp0 = float(y_clean0[MOIST]) if scenario.setpoint0 is None else scenario.setpoint0
    sp = scenario.setpoints(sp0)
    for i, lp in enumerate(loops):
        lp.y = lp.plant.observe(res.outputs[slots[i][0] - 1])
        lp.evals = [_take(res, j) for j in range(*slots[i])]
    aborted = {}
    for k in range(scenario.steps):
        d_true = scenario.true_disturbance(k)
        d_meas = scenario.measured_disturbance(k)
        reqs, slots, active = [], [], []
        for lp in loops:
            if not lp.alive:
                continue
            try:
                model, x0 = lp.ctrl.predictor(lp.evals, lp.T_prev, scenario.measured_disturbance(max(k - 1, 0)), lp.y)
                cond = predict_matrices(model, mpc.N_p)
                sp_h = sp[np.minimum(np.arange(k, k + mpc.N_p), scenario.steps - 1)]
                Dvec = np.ones(mpc.N_p * model.E.shape[1])
                qp = plan_moves(cond, x0, lp.T_prev, sp_h, mpc, Dvec)
                if not np.all(np.isfinite(qp.x)):
                    raise InstabilityError("non-finite QP solution")
            except (NumericalError, InstabilityError) as exc:
                lp.alive = False
                aborted[lp.ctrl.name] = f"step {k}: {exc}"
                continue
            T_new = apply_first_move(lp.T_prev, float(qp.x[0]), mpc)
            lp.du = T_new - lp.T_prev
            lp.T_prev = T_new
            lp.qp = qp
            start = len(reqs)
            reqs.append(lp.plant.request((T_new, feed), d_true))
            reqs += lp.ctrl.requests(T_new, feed, d_meas)
            slots.append((lp, start, len(reqs)))
        if not reqs:
            break
        try:
            res = dataio.evaluate_requests_full(reqs, plant_cfg, plant_p)
        except InstabilityError as exc:
            for lp, *_ in slots:
                lp.alive = False
                aborted[lp.ctrl.name] = f"step {k}: {exc}"
            break
        for lp, a, b in slots:
            lp.y = lp.plant.observe(res.outputs[a])
            lp.evals = [_take(res, j) for j in range(a + 1, b)]
            lp.rows.append({"k": k, "t": k * mpc.dt, "setpoint": sp[k], "y_moist": lp.y[0],
                            "y_temp": lp.y[1], "T_hot": lp.T_prev, "du": lp.du,
                            "qp_iterations": lp.qp.iterations, "qp_kkt": lp.qp.kkt})
    traj = {lp.ctrl.name: pd.DataFrame(lp.rows) for lp in loops}
    mets = {name: metrics(df, mpc) for name, df in traj.items() if len(df)}
    return MpcReport(traj, mets, aborted)


@dataclass(frozen=True)
class _Single:
    outputs: np.ndarray
    proxies: np.ndarray


def _take(res: pbm.ChainResult, j: int) -> _Single:
    return _Single(res.outputs[j:j + 1], res.proxies[j:j + 1])


def controllers_from(trained, mpc: MpcConfig, scenario: MpcScenario) -> list:
    """The three controllers compared in the closed-loop study."""
    cfg, p = trained.cfg, trained.material
    return [MechanisticController(cfg, p, mpc),
            LiftedController("ext_input", trained.ext.predictor, "ext", cfg, p, mpc, scenario.feed_kgph),
            LiftedController("hybrid", trained.hybrid.predictor, "full", cfg, p, mpc, scenario.feed_kgph)]
