import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graybox_dryer import pbm, props
from graybox_dryer.errors import ConfigError, DomainError, InstabilityError
from graybox_dryer.pbm import GasConditions, ProcessState, SectionConfig
from graybox_dryer.props import MaterialParams

P = MaterialParams()
CFG = SectionConfig()
GAS = GasConditions(T_hot=433.15, w=0.015, T_air=303.15, RH=0.4)
FEED = ProcessState(0.27, 303.15, 1.8 / 1.27)

# pinned chain input (K, kg/s, dry basis, K, -, kg/kg) and frozen output;
# a run with all step sizes divided by ten agrees to 2e-9 relative
GOLDEN_IN = (433.15, 1.8, 0.27, 303.15, 0.4, 0.015)
GOLDEN_OUT = np.array([15.18846406, 52.12032992])
GOLDEN_PROXIES = np.array([1.84233271e-01, 3.33024055e+02, 1.81398366e-01, 3.27776571e+02])


def decay(lam):
    return lambda t, s: (-lam * s.X, 0.0 * s.T)


def test_hdt_area_geometry():
    cfg = SectionConfig().with_hdt(rho_mat=400.0, r=0.01, L_t=0.01)
    assert pbm.hdt_area(ProcessState(0.0, 300.0, 1.0), cfg) == pytest.approx(1.0, rel=1e-15)
    a1 = pbm.hdt_area(ProcessState(0.1, 300.0, 1.0), cfg)
    a2 = pbm.hdt_area(ProcessState(0.1, 300.0, 2.0), cfg)
    assert a2 == pytest.approx(2.0 * a1, rel=1e-15)


def test_evaporation_dry_gas():
    s = ProcessState(0.3, 340.0, 0.5)
    gas = replace(GAS, w=0.0)
    _, aw = props.water_activity(340.0, 0.3, P)
    expected = CFG.hdt.k_HDT * pbm.hdt_area(s, CFG) * aw * props.p_sat(340.0) / (P.R_water * 340.0)
    assert pbm.evaporation_rate(s, gas, CFG, P) == pytest.approx(expected, rel=1e-13)


def test_evaporation_never_negative():
    s = ProcessState(0.001, 290.0, 0.5)
    humid = replace(GAS, w=0.2)
    assert pbm.evaporation_rate(s, humid, CFG, P) == 0.0


def test_hdt_rhs_rest_state_and_mass_balance():
    s = ProcessState(0.0, GAS.T_hot, 1.0)
    dX, dT = pbm.hdt_rhs(s, GAS, CFG, P)
    assert dX == 0.0 and dT == 0.0
    s = ProcessState(0.25, 330.0, 0.7)
    dX, _ = pbm.hdt_rhs(s, GAS, CFG, P)
    assert dX == pytest.approx(-pbm.evaporation_rate(s, GAS, CFG, P) / 0.7, rel=1e-14)


def test_conveyor_equilibrium_and_resorption():
    X_eq = props.x_e(GAS.T_air, GAS.RH, P)
    dX, dT = pbm.conveyor_rhs(ProcessState(X_eq, GAS.T_air, 1.0), GAS, CFG, P)
    assert dX == 0.0 and dT == 0.0
    dX, _ = pbm.conveyor_rhs(ProcessState(0.5 * X_eq, 320.0, 1.0), GAS, CFG, P)
    assert dX > 0


def test_conveyor_resorption_direction_matches_fine_integration():
    X_eq = props.x_e(GAS.T_air, GAS.RH, P)
    s0 = ProcessState(0.5 * X_eq, GAS.T_air, 1.0)
    tr = pbm.integrate(lambda t, s: pbm.conveyor_rhs(s, GAS, CFG, P), s0, 120.0, 0.1)
    assert 0.5 * X_eq < tr.X[-1] <= X_eq


def test_winnower_mix_cases():
    assert pbm.winnower_mix((0.2, 320.0), (0.1, 330.0), 1.0, P) == (0.2, 320.0)
    X, T = pbm.winnower_mix((0.15, 325.0), (0.15, 325.0), 0.3, P)
    assert X == pytest.approx(0.15) and T == pytest.approx(325.0)
    X, T = pbm.winnower_mix((0.2, 320.0), (0.1, 340.0), 0.5, P)
    assert X == pytest.approx(0.15, abs=1e-15)
    c_wet, c_dry = props.c_p(0.2), props.c_p(0.1)
    assert T == pytest.approx((c_wet * 320.0 + c_dry * 340.0) / (c_wet + c_dry), rel=1e-14)
    assert T < 330.0  # pulled toward the wetter, higher-heat-capacity stream


def test_winnower_flash_limits():
    X_mix, T_mix = 0.2, 330.0
    X_eq = props.x_e(GAS.T_air, GAS.RH, P)
    assert pbm.winnower_rhs(ProcessState(X_mix, 303.15, 1.0), X_mix, GAS.T_air, 0.0, GAS, CFG, P)[0] == 0.0
    rates = [abs(pbm.winnower_rhs(ProcessState(X_mix, T_mix, 1.0), X_mix, T_mix, t, GAS, CFG, P)[0])
             for t in (0.0, 1.0, 10.0, 100.0)]
    assert rates[0] == max(rates)
    cfg = replace(CFG, winnower=replace(CFG.winnower, t_W=1e6))
    assert pbm.winnower_terminal(X_mix, T_mix, GAS, cfg, P) == pytest.approx(X_mix - 0.5 * (X_mix - X_eq), rel=1e-12)
    tiny = replace(CFG, winnower=replace(CFG.winnower, t_W=1e-300))
    assert pbm.winnower_terminal(X_mix, T_mix, GAS, tiny, P) == pytest.approx(X_mix, rel=1e-15)


def test_winnower_terminal_matches_integrated_rhs():
    X_mix, T_mix = 0.2, 330.0
    cfg = replace(CFG, winnower=replace(CFG.winnower, kappa=6e-4, k_evap_winnower=6e-4, t_W=3.0, dt=0.01))
    tr = pbm.integrate(lambda t, s: pbm.winnower_rhs(s, X_mix, T_mix, t, GAS, cfg, P),
                       ProcessState(X_mix, T_mix, 1.0), cfg.winnower.t_W, cfg.winnower.dt)
    assert tr.X[-1] == pytest.approx(pbm.winnower_terminal(X_mix, T_mix, GAS, cfg, P), abs=1e-8)


def test_integrate_zero_rhs_is_constant():
    tr = pbm.integrate(lambda t, s: (0.0 * s.X, 0.0 * s.T), ProcessState(0.3, 300.0, 1.0), 2.0, 0.1)
    assert np.all(tr.X == 0.3) and np.all(tr.T == 300.0)


def test_integrate_exponential_decay():
    tr = pbm.integrate(decay(0.5), ProcessState(1.0, 300.0, 1.0), 1.0, 0.01)
    assert tr.X[-1] == pytest.approx(math.exp(-0.5), abs=1e-6)
    assert tr.t[-1] == 1.0


def test_integrate_fourth_order():
    errs = []
    for dt in (0.2, 0.1, 0.05):
        tr = pbm.integrate(decay(2.0), ProcessState(1.0, 300.0, 1.0), 2.0, dt)
        errs.append(abs(tr.X[-1] - math.exp(-4.0)))
    for a, b in zip(errs, errs[1:]):
        assert 13.0 <= a / b <= 19.0


def test_integrate_guard_and_domain():
    with pytest.raises(InstabilityError):
        pbm.integrate(lambda t, s: (0.0 * s.X, 100.0 + 0.0 * s.T), ProcessState(0.1, 300.0, 1.0), 5.0, 0.1)
    with pytest.raises(DomainError):
        pbm.integrate(decay(1.0), ProcessState(0.1, 300.0, 1.0), 1.0, 0.0)


def test_integrate_clamps_moisture_at_zero():
    tr = pbm.integrate(lambda t, s: (-1.0 + 0.0 * s.X, 0.0 * s.T), ProcessState(0.05, 300.0, 1.0), 1.0, 0.1)
    assert np.all(tr.X >= 0.0) and tr.X[-1] == 0.0


def test_chain_golden_fixture():
    r = pbm.simulate_inputs(*GOLDEN_IN, cfg=CFG, p=P)
    np.testing.assert_allclose(r.outputs, GOLDEN_OUT, rtol=1e-8)
    np.testing.assert_allclose(r.proxies, GOLDEN_PROXIES, rtol=1e-8)


def test_chain_deterministic_and_vectorised():
    T = np.array([403.15, 433.15, 453.15])
    r1 = pbm.simulate_inputs(T, 1.8, 0.27, 303.15, 0.4, 0.015, CFG, P)
    r2 = pbm.simulate_inputs(T, 1.8, 0.27, 303.15, 0.4, 0.015, CFG, P)
    assert np.array_equal(r1.outputs, r2.outputs)
    single = pbm.simulate_inputs(433.15, 1.8, 0.27, 303.15, 0.4, 0.015, CFG, P)
    np.testing.assert_allclose(r1.outputs[1], single.outputs, rtol=1e-14)
    assert r1.outputs[0, 0] > r1.outputs[2, 0]  # hotter air dries more


def test_chain_at_equilibrium_is_stationary():
    T_amb, RH = 303.15, 0.4
    X_eq = props.x_e(T_amb, RH, P)
    gas = GasConditions(T_hot=T_amb, w=0.0, T_air=T_amb, RH=RH)
    # zero activity material: no evaporation anywhere, every section in balance
    p = MaterialParams(theta_aw_fX_b=1e-300)
    cfg = replace(CFG, physics=replace(CFG.physics, cp_moisture=True))
    r = pbm.simulate_chain(ProcessState(X_eq, T_amb, 1.0), gas, cfg, p)
    assert r.X_out == pytest.approx(X_eq, rel=1e-12)
    assert r.T_out == pytest.approx(T_amb, rel=1e-12)


def test_chain_records_trajectories():
    r = pbm.simulate_chain(FEED, GAS, CFG, P, record=True)
    assert set(r.trajectories) == {"hdt", "conveyor", "winnower"}
    assert r.trajectories["hdt"].t[-1] == pytest.approx(CFG.hdt.residence_time)


def test_energy_and_mass_audit_over_sixty_seconds():
    hdt = pbm.integrate(lambda t, s: pbm.hdt_rhs(s, GAS, CFG, P), FEED, CFG.hdt.residence_time, CFG.hdt.dt)
    conv_time = 60.0 - CFG.hdt.residence_time
    conv = pbm.integrate(lambda t, s: pbm.conveyor_rhs(s, GAS, CFG, P), hdt.final, conv_time, 0.5)
    worst_e = worst_m = 0.0
    for section, tr, h in (("hdt", hdt, np.diff(hdt.t)[0]), ("conveyor", conv, np.diff(conv.t)[0])):
        for i in range(len(tr.t) - 1):
            a = pbm.step_audit(section, ProcessState(tr.X[i], tr.T[i], FEED.M_dry), GAS, CFG, P, h)
            worst_e = max(worst_e, float(a.energy_rel_error))
            worst_m = max(worst_m, float(a.mass_rel_error))
    assert worst_e < 1e-6
    assert worst_m < 1e-6


def test_section_config_validation_and_round_trip():
    with pytest.raises(DomainError):
        SectionConfig().with_hdt(h_HDT=-1.0)
    with pytest.raises(ConfigError):
        SectionConfig(winnower=replace(CFG.winnower, mode="fast"))
    assert SectionConfig.from_dict(CFG.to_dict()) == CFG
    with pytest.raises(ConfigError):
        SectionConfig.from_dict({"hdt": {"bogus": 1}})


def test_process_state_validation():
    with pytest.raises(DomainError):
        ProcessState(-0.1, 300.0, 1.0).validate()
    with pytest.raises(DomainError):
        ProcessState(0.1, 600.0, 1.0).validate()
    s = ProcessState(0.25, 300.0, 2.0)
    assert s.M_water == 0.5 and s.M_wet == 2.5


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 0.6), st.floats(0.0, 0.6), st.floats(290.0, 360.0), st.floats(290.0, 360.0))
def test_mix_is_between_streams(beta, X1, X2, T1, T2):
    X, T = pbm.winnower_mix((X1, T1), (X2, T2), beta, P)
    assert min(X1, X2) - 1e-12 <= X <= max(X1, X2) + 1e-12
    assert min(T1, T2) - 1e-9 <= T <= max(T1, T2) + 1e-9


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 0.5), st.floats(280.0, 450.0))
def test_evaporation_non_negative_everywhere(X, T):
    assert pbm.evaporation_rate(ProcessState(X, T, 1.0), GAS, CFG, P) >= 0.0
