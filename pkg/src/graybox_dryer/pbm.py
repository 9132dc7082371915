"""Transient mechanistic model of the drying chain.

Three sections are simulated in sequence for every material parcel:

* HDT pneumatic tube: convective heating and surface evaporation driven by
  the vapour-density difference between particle surface and hot gas;
* conveyor belt: diffusion-limited drying towards the ambient equilibrium
  moisture with natural-convection cooling;
* winnower: remixing of the conveyor top layer with HDT material followed by
  flash evaporation.

State variables are numpy arrays (or floats) so that one call simulates many
independent parcels at once. Gas conditions are held constant over each
section pass (lumped, quasi-static gas phase).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable

import numpy as np

from . import props
from .errors import ConfigError, DomainError, InstabilityError
from .props import MaterialParams, T_ACTIVITY_REF, T_ZERO_C

T_MIN_GUARD = 200.0
T_MAX_GUARD = 500.0
P_ATM = 101325.0
EPS_VAPOR = 0.622


@dataclass(frozen=True)
class ProcessState:
    """Lumped parcel state: dry-basis moisture, temperature [K], dry mass [kg]."""

    X: np.ndarray | float
    T: np.ndarray | float
    M_dry: np.ndarray | float

    @property
    def M_water(self):
        return self.X * self.M_dry

    @property
    def M_wet(self):
        return self.M_dry * (1.0 + self.X)

    def validate(self):
        X, T, M = (np.asarray(v, dtype=float) for v in (self.X, self.T, self.M_dry))
        if np.any(X < 0):
            raise DomainError("ProcessState: X must be >= 0")
        if np.any((T < T_MIN_GUARD) | (T > T_MAX_GUARD)):
            raise DomainError("ProcessState: T outside [200, 500] K")
        if np.any(M <= 0):
            raise DomainError("ProcessState: M_dry must be > 0")
        return self


@dataclass(frozen=True)
class GasConditions:
    """Hot-air and ambient conditions seen by a parcel."""

    T_hot: np.ndarray | float
    w: np.ndarray | float
    T_air: np.ndarray | float
    RH: np.ndarray | float
    P_total: np.ndarray | float = P_ATM

    def validate(self):
        if np.any(np.asarray(self.w) < 0):
            raise DomainError("GasConditions: w must be >= 0")
        if np.any(np.asarray(self.P_total) <= 0):
            raise DomainError("GasConditions: P_total must be > 0")
        RH = np.asarray(self.RH)
        if np.any((RH < 0) | (RH >= 1)):
            raise DomainError("GasConditions: RH must lie in [0, 1)")
        return self


@dataclass(frozen=True)
class PhysicsOptions:
    """Switches for the ablation variants of the mechanistic core.

    ``cp_ref_X`` is the moisture at which the heat capacity is frozen when
    ``cp_moisture`` is off.
    """

    aw_clamp: bool = True
    lv_correction: bool = True
    cp_moisture: bool = True
    cp_ref_X: float = 0.2


@dataclass(frozen=True)
class HdtConfig:
    h_HDT: float = 66.6
    k_HDT: float = 0.0219
    r: float = 4e-4
    L_t: float = 0.02
    rho_mat: float = 600.0
    T_ref: float = T_ZERO_C
    residence_time: float = 4.0
    dt: float = 0.05


@dataclass(frozen=True)
class ConveyorConfig:
    chi_layer: float = 0.1
    L_char: float = 5e-4
    h_conveyor: float = 1.5
    A_exp: float = 1.0
    residence_time: float = 120.0
    dt: float = 5.0


@dataclass(frozen=True)
class WinnowerConfig:
    beta_top: float = 0.6
    kappa: float = 6e-4
    h_winnower: float = 10.0
    t_W: float = 3.0
    k_evap_winnower: float = 6e-4
    dt: float = 0.25
    mode: str = "dynamic"


@dataclass(frozen=True)
class SectionConfig:
    """Geometry, transfer coefficients and step sizes for the three sections."""

    hdt: HdtConfig = field(default_factory=HdtConfig)
    conveyor: ConveyorConfig = field(default_factory=ConveyorConfig)
    winnower: WinnowerConfig = field(default_factory=WinnowerConfig)
    physics: PhysicsOptions = field(default_factory=PhysicsOptions)
    parcel_seconds: float = 1.0

    def __post_init__(self):
        h, c, w = self.hdt, self.conveyor, self.winnower
        positive = {
            "hdt.h_HDT": h.h_HDT, "hdt.k_HDT": h.k_HDT, "hdt.r": h.r, "hdt.L_t": h.L_t,
            "hdt.rho_mat": h.rho_mat, "hdt.T_ref": h.T_ref,
            "hdt.residence_time": h.residence_time, "hdt.dt": h.dt,
            "conveyor.chi_layer": c.chi_layer, "conveyor.L_char": c.L_char,
            "conveyor.h_conveyor": c.h_conveyor, "conveyor.A_exp": c.A_exp,
            "conveyor.residence_time": c.residence_time, "conveyor.dt": c.dt,
            "winnower.kappa": w.kappa, "winnower.h_winnower": w.h_winnower,
            "winnower.t_W": w.t_W, "winnower.k_evap_winnower": w.k_evap_winnower,
            "winnower.dt": w.dt, "parcel_seconds": self.parcel_seconds,
        }
        for name, v in positive.items():
            if not np.all(np.asarray(v) > 0):
                raise DomainError(f"SectionConfig: {name} must be > 0")
        if not 0.0 <= w.beta_top <= 1.0:
            raise DomainError("SectionConfig: winnower.beta_top must lie in [0, 1]")
        if w.mode not in ("dynamic", "terminal"):
            raise ConfigError(f"winnower.mode must be 'dynamic' or 'terminal', got {w.mode!r}")

    def with_hdt(self, **kw) -> "SectionConfig":
        return replace(self, hdt=replace(self.hdt, **kw))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SectionConfig":
        blocks = {"hdt": HdtConfig, "conveyor": ConveyorConfig,
                  "winnower": WinnowerConfig, "physics": PhysicsOptions}
        kw = {}
        for key, val in d.items():
            if key in blocks:
                known = {f.name for f in fields(blocks[key])}
                unknown = set(val) - known
                if unknown:
                    raise ConfigError(f"unknown keys in pbm.{key}: {sorted(unknown)}")
                kw[key] = blocks[key](**val)
            elif key == "parcel_seconds":
                kw[key] = float(val)
            else:
                raise ConfigError(f"unknown pbm config key: {key!r}")
        return cls(**kw)


# --------------------------------------------------------------------------
# Constitutive pieces

def _activity(T, X, p: MaterialParams, phys: PhysicsOptions):
    raw = -np.expm1(-p.theta_aw_fX_b * X) * np.exp(p.theta_aw1 * (1.0 / T - 1.0 / T_ACTIVITY_REF))
    if phys.aw_clamp:
        return np.clip(raw, 0.0, 1.0)
    return raw


def _latent(T, a_w, p: MaterialParams, phys: PhysicsOptions):
    theta = p.theta_Lv_aw if phys.lv_correction else 0.0
    return props._l_v(T, a_w, theta)


def thermal_mass(state: ProcessState, p: MaterialParams, phys: PhysicsOptions = PhysicsOptions()):
    """Heat capacity of the parcel [J/K]: ``M_dry*C_p,dry + M_water*C_p,w``."""
    if phys.cp_moisture:
        return state.M_dry * (p.theta_cp1 + state.X * p.theta_cp2)
    return state.M_wet * (p.theta_cp1 + phys.cp_ref_X * p.theta_cp2) / (1.0 + phys.cp_ref_X)


def _dC_dX(state: ProcessState, p: MaterialParams, phys: PhysicsOptions):
    if phys.cp_moisture:
        return state.M_dry * p.theta_cp2
    return state.M_dry * (p.theta_cp1 + phys.cp_ref_X * p.theta_cp2) / (1.0 + phys.cp_ref_X)


def hdt_area(state: ProcessState, cfg: SectionConfig):
    """Heat/mass transfer area of cylindrical particles [m^2]."""
    h = cfg.hdt
    if np.any(np.asarray(h.r) <= 0) or np.any(np.asarray(h.L_t) <= 0):
        raise DomainError("hdt_area: particle geometry must be positive")
    return state.M_wet / h.rho_mat * (2.0 / h.r + 2.0 / h.L_t)


def gas_vapor_density(gas: GasConditions):
    """Bulk-gas vapour density [kg/m^3] from the humidity ratio."""
    p_v = gas.w * gas.P_total / (EPS_VAPOR + gas.w)
    return p_v / (MaterialParams.R_water * gas.T_hot)


def surface_vapor_density(T, X, p: MaterialParams, phys: PhysicsOptions = PhysicsOptions()):
    a_w = _activity(T, X, p, phys)
    return a_w * props._p_sat(T) / (p.R_water * T)


def evaporation_rate(state: ProcessState, gas: GasConditions, cfg: SectionConfig,
                     p: MaterialParams = MaterialParams()):
    """HDT evaporation mass rate [kg/s]; never negative (no condensation)."""
    rho_gas = gas.w * gas.P_total / (EPS_VAPOR + gas.w) / (p.R_water * gas.T_hot)
    rho_surf = surface_vapor_density(state.T, state.X, p, cfg.physics)
    return cfg.hdt.k_HDT * hdt_area(state, cfg) * np.maximum(0.0, rho_surf - rho_gas)


def hdt_rhs(state: ProcessState, gas: GasConditions, cfg: SectionConfig,
            p: MaterialParams = MaterialParams()):
    """Moisture and temperature derivatives in the pneumatic tube."""
    h = cfg.hdt
    phys = cfg.physics
    X, T = state.X, state.T
    area = state.M_dry * (1.0 + X) / h.rho_mat * (2.0 / h.r + 2.0 / h.L_t)
    a_w = _activity(T, X, p, phys)
    rho_surf = a_w * props._p_sat(T) / (p.R_water * T)
    rho_gas = gas.w * gas.P_total / (EPS_VAPOR + gas.w) / (p.R_water * gas.T_hot)
    m_evap = h.k_HDT * area * np.maximum(0.0, rho_surf - rho_gas)
    dX = -m_evap / state.M_dry
    q_in = h.h_HDT * area * (gas.T_hot - T)
    q_evap = (_latent(T, np.clip(a_w, 0.0, 1.0), p, phys) + p.theta_cp2 * (T - h.T_ref)) * m_evap
    dT = (q_in - q_evap) / thermal_mass(state, p, phys)
    return dX, dT


def conveyor_drying_rate(state: ProcessState, gas: GasConditions, cfg: SectionConfig,
                         p: MaterialParams = MaterialParams()):
    """dX/dt on the belt (diffusion-limited approach to equilibrium)."""
    c = cfg.conveyor
    X_eq = props._x_e(gas.T_air, gas.RH, p)
    return -c.chi_layer * props._d_eff(state.T, gas.RH, state.X, p) * (state.X - X_eq) / c.L_char ** 2


def conveyor_rhs(state: ProcessState, gas: GasConditions, cfg: SectionConfig,
                 p: MaterialParams = MaterialParams()):
    """Moisture and temperature derivatives on the conveyor belt."""
    c = cfg.conveyor
    phys = cfg.physics
    if np.any(np.asarray(c.L_char) <= 0):
        raise DomainError("conveyor_rhs: L_char must be > 0")
    dX = conveyor_drying_rate(state, gas, cfg, p)
    m_evap = state.M_dry * (-dX)
    a_w = np.clip(_activity(state.T, state.X, p, phys), 0.0, 1.0)
    q_out = c.h_conveyor * c.A_exp * (state.T - gas.T_air)
    q_evap = (_latent(state.T, a_w, p, phys) + p.theta_cp2 * (state.T - cfg.hdt.T_ref)) * m_evap
    dT = (-q_out - q_evap) / thermal_mass(state, p, phys)
    return dX, dT


def winnower_mix(top, bottom, beta_top, p: MaterialParams = MaterialParams(),
                 phys: PhysicsOptions = PhysicsOptions()):
    """Blend conveyor top layer ``(X_conv, T_conv)`` with HDT stream ``(X_HDT, T_HDT)``.

    Moisture is mass-fraction weighted; temperature is weighted by
    ``beta * c_p(X)`` of each stream.
    """
    X_top, T_top = top
    X_bot, T_bot = bottom
    if not np.all((np.asarray(beta_top) >= 0) & (np.asarray(beta_top) <= 1)):
        raise DomainError("winnower_mix: beta_top must lie in [0, 1]")
    X_in = beta_top * X_top + (1.0 - beta_top) * X_bot
    if phys.cp_moisture:
        c_top = (p.theta_cp1 + X_top * p.theta_cp2) / (1.0 + X_top)
        c_bot = (p.theta_cp1 + X_bot * p.theta_cp2) / (1.0 + X_bot)
    else:
        c_top = c_bot = 1.0
    w_top = beta_top * c_top
    w_bot = (1.0 - beta_top) * c_bot
    T_in = (w_top * T_top + w_bot * T_bot) / (w_top + w_bot)
    return X_in, T_in


def _flash_drive(T_mix, T_air):
    return np.maximum(0.0, T_mix - T_air)


def winnower_rhs(state: ProcessState, X_mix, T_mix, t, gas: GasConditions, cfg: SectionConfig,
                 p: MaterialParams = MaterialParams()):
    """Flash-evaporation dynamics; ``t`` is time since entering the winnower."""
    if t < 0:
        raise DomainError("winnower_rhs: t must be >= 0")
    w = cfg.winnower
    phys = cfg.physics
    X_eq = props._x_e(gas.T_air, gas.RH, p)
    rate = w.kappa * _flash_drive(T_mix, gas.T_air)
    dX = -0.5 * (X_mix - X_eq) * rate * np.exp(-rate * t)
    m_evap = state.M_dry * (-dX)
    a_w = np.clip(_activity(state.T, state.X, p, phys), 0.0, 1.0)
    q_evap = (_latent(state.T, a_w, p, phys) + p.theta_cp2 * (state.T - cfg.hdt.T_ref)) * m_evap
    dT = (-w.h_winnower * (state.T - gas.T_air) - q_evap) / thermal_mass(state, p, phys)
    return dX, dT


def winnower_terminal(X_mix, T_mix, gas: GasConditions, cfg: SectionConfig,
                      p: MaterialParams = MaterialParams()):
    """Closed-form outlet moisture after the winnower residence time."""
    w = cfg.winnower
    X_eq = props._x_e(gas.T_air, gas.RH, p)
    expo = w.k_evap_winnower * w.t_W * _flash_drive(T_mix, gas.T_air)
    return X_mix - (X_mix - X_eq) * 0.5 * (-np.expm1(-expo))


# --------------------------------------------------------------------------
# Integration

@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray
    X: np.ndarray
    T: np.ndarray
    M_dry: np.ndarray | float

    @property
    def final(self) -> ProcessState:
        return ProcessState(self.X[-1], self.T[-1], self.M_dry)

    @property
    def initial(self) -> ProcessState:
        return ProcessState(self.X[0], self.T[0], self.M_dry)


Rhs = Callable[[float, ProcessState], tuple]


def _check_finite(X, T, t):
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(T))):
        raise InstabilityError(f"non-finite state at t={t:.4g} s")
    if np.any(T < T_MIN_GUARD) or np.any(T > T_MAX_GUARD):
        raise InstabilityError(f"temperature left [200, 500] K at t={t:.4g} s")


def integrate(rhs: Rhs, state0: ProcessState, duration: float, dt: float,
              record: bool = True) -> Trajectory:
    """Classical fixed-step RK4.

    The number of steps is ``ceil(duration/dt)`` with the step shortened
    uniformly so the final time is hit exactly. ``X`` is clamped at zero after
    every step. With ``record=False`` only the initial and final states are
    kept.
    """
    if not dt > 0:
        raise DomainError("integrate: dt must be > 0")
    if duration < 0:
        raise DomainError("integrate: duration must be >= 0")
    n = max(int(math.ceil(duration / dt - 1e-9)), 0)
    h = duration / n if n else 0.0
    M = state0.M_dry
    X, T = (np.array(v, dtype=float) for v in np.broadcast_arrays(state0.X, state0.T))
    _check_finite(X, T, 0.0)
    ts, Xs, Ts = [0.0], [X], [T]
    t = 0.0
    for i in range(n):
        k1x, k1t = rhs(t, ProcessState(X, T, M))
        k2x, k2t = rhs(t + 0.5 * h, ProcessState(X + 0.5 * h * k1x, T + 0.5 * h * k1t, M))
        k3x, k3t = rhs(t + 0.5 * h, ProcessState(X + 0.5 * h * k2x, T + 0.5 * h * k2t, M))
        k4x, k4t = rhs(t + h, ProcessState(X + h * k3x, T + h * k3t, M))
        X = np.maximum(X + h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x), 0.0)
        T = T + h / 6.0 * (k1t + 2.0 * k2t + 2.0 * k3t + k4t)
        t = (i + 1) * h
        _check_finite(X, T, t)
        if record:
            ts.append(t)
            Xs.append(X)
            Ts.append(T)
    if not record and n:
        ts.append(t)
        Xs.append(X)
        Ts.append(T)
    return Trajectory(np.asarray(ts), np.asarray(Xs), np.asarray(Ts), M)


# --------------------------------------------------------------------------
# Whole chain

@dataclass(frozen=True)
class ChainResult:
    """Section-exit states (internal units) and outputs at the measurement boundary.

    ``proxies`` stacks ``[X_HDT, T_HDT, X_conv, T_conv]`` along the last axis.
    """

    X_HDT: np.ndarray
    T_HDT: np.ndarray
    X_conv: np.ndarray
    T_conv: np.ndarray
    X_mix: np.ndarray
    T_mix: np.ndarray
    X_out: np.ndarray
    T_out: np.ndarray
    trajectories: dict | None = None

    @property
    def proxies(self) -> np.ndarray:
        return np.stack([self.X_HDT, self.T_HDT, self.X_conv, self.T_conv], axis=-1)

    @property
    def y_moist_wb_pct(self):
        return 100.0 * self.X_out / (1.0 + self.X_out)

    @property
    def y_temp_C(self):
        return self.T_out - T_ZERO_C

    @property
    def outputs(self) -> np.ndarray:
        """``[moisture wet-basis %, temperature C]`` along the last axis."""
        return np.stack([self.y_moist_wb_pct, self.y_temp_C], axis=-1)


PROXY_NAMES = ("X_HDT", "T_HDT", "X_conv", "T_conv")


def simulate_chain(feed: ProcessState, gas: GasConditions, cfg: SectionConfig = SectionConfig(),
                   p: MaterialParams = MaterialParams(), record: bool = False) -> ChainResult:
    """Run HDT -> conveyor -> winnower for the given feed parcels."""
    h, c, w = cfg.hdt, cfg.conveyor, cfg.winnower

    traj_hdt = integrate(lambda t, s: hdt_rhs(s, gas, cfg, p), feed, h.residence_time, h.dt, record)
    s_hdt = traj_hdt.final
    traj_conv = integrate(lambda t, s: conveyor_rhs(s, gas, cfg, p), s_hdt, c.residence_time, c.dt, record)
    s_conv = traj_conv.final

    X_mix, T_mix = winnower_mix((s_conv.X, s_conv.T), (s_hdt.X, s_hdt.T), w.beta_top, p, cfg.physics)
    trajs = {"hdt": traj_hdt, "conveyor": traj_conv} if record else None
    if w.mode == "terminal":
        X_out = winnower_terminal(X_mix, T_mix, gas, cfg, p)
        T_out = T_mix
    else:
        mixed = ProcessState(X_mix, T_mix, feed.M_dry)
        traj_w = integrate(lambda t, s: winnower_rhs(s, X_mix, T_mix, t, gas, cfg, p),
                           mixed, w.t_W, w.dt, record)
        X_out, T_out = traj_w.X[-1], traj_w.T[-1]
        if record:
            trajs["winnower"] = traj_w
    return ChainResult(s_hdt.X, s_hdt.T, s_conv.X, s_conv.T, X_mix, T_mix, X_out, T_out, trajs)


def feed_state(X_in_db, T_feed, feed_kgps, parcel_seconds: float = 1.0) -> ProcessState:
    """Parcel entering the HDT: one ``parcel_seconds`` worth of wet feed."""
    X_in_db = np.asarray(X_in_db, dtype=float)
    return ProcessState(X_in_db, np.asarray(T_feed, dtype=float) + 0.0 * X_in_db,
                        np.asarray(feed_kgps, dtype=float) * parcel_seconds / (1.0 + X_in_db))


def simulate_inputs(T_hot, feed_kgps, X_in_db, T_air, RH, w, cfg: SectionConfig = SectionConfig(),
                    p: MaterialParams = MaterialParams(), P_total=P_ATM) -> ChainResult:
    """Chain simulation from internal-unit inputs (K, kg/s, dry basis)."""
    T_hot, feed_kgps, X_in_db, T_air, RH, w = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (T_hot, feed_kgps, X_in_db, T_air, RH, w)))
    feed = feed_state(X_in_db, T_air, feed_kgps, cfg.parcel_seconds)
    gas = GasConditions(T_hot=np.asarray(T_hot, dtype=float), w=np.asarray(w, dtype=float),
                        T_air=np.asarray(T_air, dtype=float), RH=np.asarray(RH, dtype=float),
                        P_total=P_total)
    gas.validate()
    feed.validate()
    return simulate_chain(feed, gas, cfg, p)


# --------------------------------------------------------------------------
# Conservation audits

@dataclass(frozen=True)
class StepAudit:
    """Integrated terms of one step's energy and mass balances [J] / [kg]."""

    delta_enthalpy: np.ndarray
    heat_in: np.ndarray
    evap_outflow: np.ndarray
    carried_outflow: np.ndarray
    evaporated_mass: np.ndarray
    delta_water: np.ndarray

    @property
    def energy_rel_error(self):
        lhs = self.delta_enthalpy + self.evap_outflow + self.carried_outflow
        scale = np.maximum.reduce([np.abs(self.heat_in), np.abs(self.evap_outflow),
                                   np.abs(self.delta_enthalpy), np.full_like(lhs, 1e-300)])
        return np.abs(lhs - self.heat_in) / scale

    @property
    def mass_rel_error(self):
        scale = np.maximum(np.abs(self.evaporated_mass), 1e-300)
        return np.abs(self.delta_water + self.evaporated_mass) / scale


def _section_fluxes(section: str, state: ProcessState, gas: GasConditions, cfg: SectionConfig,
                    p: MaterialParams, X_mix=None, T_mix=None, t=0.0):
    """(heat inflow [W], evaporation mass rate [kg/s]) evaluated from the constitutive laws."""
    if section == "hdt":
        q_in = cfg.hdt.h_HDT * hdt_area(state, cfg) * (gas.T_hot - state.T)
        m = evaporation_rate(state, gas, cfg, p)
    elif section == "conveyor":
        q_in = -cfg.conveyor.h_conveyor * cfg.conveyor.A_exp * (state.T - gas.T_air)
        m = -state.M_dry * conveyor_drying_rate(state, gas, cfg, p)
    elif section == "winnower":
        rate = cfg.winnower.kappa * _flash_drive(T_mix, gas.T_air)
        X_eq = props._x_e(gas.T_air, gas.RH, p)
        m = state.M_dry * 0.5 * (X_mix - X_eq) * rate * np.exp(-rate * t)
        q_in = -cfg.winnower.h_winnower * (state.T - gas.T_air)
    else:
        raise ValueError(f"unknown section {section!r}")
    return q_in, m


def step_audit(section: str, state: ProcessState, gas: GasConditions, cfg: SectionConfig,
               p: MaterialParams, h: float, t0: float = 0.0, X_mix=None, T_mix=None) -> StepAudit:
    """Energy/mass bookkeeping over one integrator step of length ``h``.

    The step is taken as two RK4 half steps; flux integrals use Simpson's rule
    on the three resulting states, while the enthalpy change
    ``U = C(X) (T - T_ref)`` is a state function evaluated at the endpoints
    only. The balance closes when
    ``dU + int (L_v + c_w (T - T_ref)) m dt + int dC/dX/M_dry (T - T_ref) m dt = int Q_in dt``;
    the last term is the enthalpy that the evaporated water had carried in
    ``U``.
    """
    phys = cfg.physics
    rhs = {
        "hdt": lambda t, s: hdt_rhs(s, gas, cfg, p),
        "conveyor": lambda t, s: conveyor_rhs(s, gas, cfg, p),
        "winnower": lambda t, s: winnower_rhs(s, X_mix, T_mix, t0 + t, gas, cfg, p),
    }[section]
    traj = integrate(rhs, state, h, h / 2.0, record=True)
    pts = [ProcessState(traj.X[i], traj.T[i], state.M_dry) for i in range(3)]
    T_ref = cfg.hdt.T_ref
    q, evap, carry, mass = [], [], [], []
    for i, s in enumerate(pts):
        q_in, m = _section_fluxes(section, s, gas, cfg, p, X_mix, T_mix, t0 + traj.t[i])
        a_w = np.clip(_activity(s.T, s.X, p, phys), 0.0, 1.0)
        q.append(q_in)
        evap.append((_latent(s.T, a_w, p, phys) + p.theta_cp2 * (s.T - T_ref)) * m)
        carry.append(_dC_dX(s, p, phys) / s.M_dry * (s.T - T_ref) * m)
        mass.append(m)

    def simpson(f):
        return h / 6.0 * (f[0] + 4.0 * f[1] + f[2])

    U0 = thermal_mass(pts[0], p, phys) * (pts[0].T - T_ref)
    U1 = thermal_mass(pts[2], p, phys) * (pts[2].T - T_ref)
    return StepAudit(
        delta_enthalpy=np.asarray(U1 - U0),
        heat_in=np.asarray(simpson(q)),
        evap_outflow=np.asarray(simpson(evap)),
        carried_outflow=np.asarray(simpson(carry)),
        evaporated_mass=np.asarray(simpson(mass)),
        delta_water=np.asarray(state.M_dry * (pts[2].X - pts[0].X)),
    )
