"""Material property correlations for the dried solid.

All functions are pure and accept either Python floats or numpy arrays
(evaluated elementwise with broadcasting). Temperatures are in Kelvin.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import ConfigError, DomainError

T_ZERO_C = 273.15
T_ACTIVITY_REF = 298.15

MAGNUS_A = 610.78
MAGNUS_B = 17.27
MAGNUS_C = 237.7


@dataclass(frozen=True)
class MaterialParams:
    """Coefficients of the property correlations.

    ``theta_aw1``, ``theta_cp1``, ``theta_cp2``, ``theta_xe1..3``, ``R_gas``
    and ``R_water`` are literature values for the material; the diffusivity
    and latent-heat coefficients are engineering defaults.
    """

    theta_aw1: float = -3000.0
    theta_aw_fX_b: float = 15.0
    theta_cp1: float = 1300.0
    theta_cp2: float = 4186.0
    theta_Lv_aw: float = 0.2
    theta_xe1: float = 0.075
    theta_xe2: float = -1e-4
    theta_xe3: float = 0.55
    theta_D0: float = 3e-6
    theta_Ea: float = 25000.0
    theta_D_RH: float = 0.3
    R_gas: float = 8.314
    R_water: float = 461.5

    def __post_init__(self):
        checks = [
            (np.all(np.asarray(self.theta_cp1) > 0), "theta_cp1 must be > 0"),
            (np.all(np.asarray(self.theta_cp2) > 0), "theta_cp2 must be > 0"),
            (np.all((np.asarray(self.theta_xe3) > 0) & (np.asarray(self.theta_xe3) < 1)),
             "theta_xe3 must lie in (0, 1)"),
            (np.all(np.asarray(self.theta_D0) > 0), "theta_D0 must be > 0"),
            (np.all(np.asarray(self.theta_Ea) > 0), "theta_Ea must be > 0"),
            (np.all((np.asarray(self.theta_aw1) >= -6000) & (np.asarray(self.theta_aw1) <= -1500)),
             "theta_aw1 must lie in [-6000, -1500]"),
        ]
        for ok, msg in checks:
            if not ok:
                raise DomainError(msg)

    def to_dict(self) -> dict:
        return {k: float(v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "MaterialParams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown material parameters: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})


# Unchecked kernels for the simulation hot loop; callers guarantee the domain.

def _p_sat(T):
    tc = T - T_ZERO_C
    return MAGNUS_A * np.exp(MAGNUS_B * tc / (MAGNUS_C + tc))


def _l_v(T, a_w, theta_lv_aw):
    return (2501.0 - 2.361 * (T - T_ZERO_C)) * 1e3 * (1.0 + theta_lv_aw * (1.0 - a_w))


def _x_e(T, RH, p):
    return np.maximum((p.theta_xe1 + p.theta_xe2 * T) * (RH / (1.0 - RH)) ** p.theta_xe3, 0.0)


def _d_eff(T, RH, X, p):
    return (p.theta_D0 * np.exp(-p.theta_Ea / (p.R_gas * T))
            * (1.0 + 2.0 * X) * (1.0 - p.theta_D_RH * RH))


def p_sat(T):
    """Saturation vapour pressure of water [Pa] by the Magnus formula."""
    T = np.asarray(T, dtype=float)
    if not np.all(np.isfinite(T)):
        raise DomainError("p_sat: non-finite temperature")
    if np.any(MAGNUS_C + (T - T_ZERO_C) <= 0):
        raise DomainError("p_sat: temperature below the Magnus pole (-237.7 C)")
    out = _p_sat(T)
    return out if out.ndim else float(out)


def sorption_shape(X, b):
    """Isotherm shape factor ``f(X) = 1 - exp(-b X)``."""
    return -np.expm1(-b * np.asarray(X, dtype=float))


def water_activity(T, X, p: MaterialParams = MaterialParams()):
    """Water activity at the particle surface.

    Returns
    -------
    (a_w_raw, a_w_clamped)
        Raw correlation value and its projection onto [0, 1].
    """
    T = np.asarray(T, dtype=float)
    X = np.asarray(X, dtype=float)
    if np.any(T <= 0):
        raise DomainError("water_activity: T must be > 0 K")
    if np.any(X < 0):
        raise DomainError("water_activity: X must be >= 0")
    raw = sorption_shape(X, p.theta_aw_fX_b) * np.exp(
        p.theta_aw1 * (1.0 / T - 1.0 / T_ACTIVITY_REF))
    clamped = np.clip(raw, 0.0, 1.0)
    if raw.ndim == 0:
        return float(raw), float(clamped)
    return raw, clamped


def c_p(X, p: MaterialParams = MaterialParams()):
    """Specific heat of the wet material [J/(kg K)], mass-weighted."""
    X = np.asarray(X, dtype=float)
    if np.any(X < 0):
        raise DomainError("c_p: X must be >= 0")
    out = (p.theta_cp1 + X * p.theta_cp2) / (1.0 + X)
    return out if out.ndim else float(out)


def l_v(T, a_w, p: MaterialParams = MaterialParams()):
    """Latent heat of vaporisation with the bound-water correction [J/kg]."""
    T = np.asarray(T, dtype=float)
    a_w = np.asarray(a_w, dtype=float)
    if np.any((a_w < 0) | (a_w > 1)):
        raise DomainError("l_v: a_w must lie in [0, 1]")
    if not np.all(np.isfinite(T)):
        raise DomainError("l_v: non-finite temperature")
    out = _l_v(T, a_w, p.theta_Lv_aw)
    return out if out.ndim else float(out)


def x_e(T, RH, p: MaterialParams = MaterialParams()):
    """Equilibrium moisture content (modified Oswin), dry basis, floored at 0."""
    T = np.asarray(T, dtype=float)
    RH = np.asarray(RH, dtype=float)
    if np.any((RH < 0) | (RH >= 1)):
        raise DomainError("x_e: RH must lie in [0, 1)")
    if np.any(T <= 0):
        raise DomainError("x_e: T must be > 0 K")
    out = _x_e(T, RH, p)
    return out if out.ndim else float(out)


def d_eff(T, RH, X, p: MaterialParams = MaterialParams()):
    """Effective moisture diffusivity [m^2/s]."""
    T = np.asarray(T, dtype=float)
    RH = np.asarray(RH, dtype=float)
    X = np.asarray(X, dtype=float)
    if np.any(T <= 0):
        raise DomainError("d_eff: T must be > 0 K")
    if np.any((RH < 0) | (RH > 1)):
        raise DomainError("d_eff: RH must lie in [0, 1]")
    if np.any(X < 0):
        raise DomainError("d_eff: X must be >= 0")
    hum = 1.0 - p.theta_D_RH * RH
    if np.any(hum <= 0):
        raise DomainError("d_eff: humidity factor 1 - theta_D_RH*RH must be > 0")
    out = _d_eff(T, RH, X, p)
    return out if out.ndim else float(out)
