import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from qtur import oscillator, thermo
from qtur.errors import ConvergenceError, DomainError, PreconditionError
from qtur.lindblad import (
    JumpSpec,
    Lindbladian,
    build_detailed_balanced,
    build_oscillator,
    oscillator_power_operator,
)
from qtur.opalg import delta_centered, skew_covariance
from qtur.suites import random_driven_system, random_hermitian, saturating_qubit

SIGMA_Z = np.diag([0.5, -0.5]).astype(complex)
SIGMA_X = np.array([[0, 0.5], [0.5, 0]], dtype=complex)


def sin2(tau):
    return (lambda t: math.sin(math.pi * t / tau) ** 2, lambda t: (math.pi / tau) * math.sin(2 * math.pi * t / tau))


def static_system(T_c=0.5, T_h=1.0, tau=10.0):
    protocol = thermo.Protocol(
        tau=tau, T_c=T_c, T_h=T_h,
        alpha=lambda t: 0.0, mechanical=lambda t: np.zeros(1),
        alpha_dot=lambda t: 0.0, mechanical_dot=lambda t: np.zeros(1),
    )
    return thermo.ParametricSystem(
        protocol,
        thermo.LinearDrive(np.diag([0.0, 1.0, 2.5]), [np.diag([1.0, 0.0, 0.0])]),
        thermo.DetailedBalancedFamily([JumpSpec(0, 1, 0.5), JumpSpec(1, 2, 0.8)]),
    )


def qubit_system(drive, *, tau=20.0, T_c=0.5, T_h=1.5, amplitude=0.3, alpha=None, fd=False):
    """Qubit with gap 1 + amplitude * (1 - cos) along ``drive``."""
    a, a_dot = alpha if alpha is not None else sin2(tau)
    mech, mech_dot = thermo.fourier_drive([[amplitude, 0.0]], [[0.0, amplitude]], tau)
    protocol = thermo.Protocol(
        tau=tau, T_c=T_c, T_h=T_h, alpha=a, mechanical=mech,
        alpha_dot=None if fd else a_dot, mechanical_dot=None if fd else mech_dot,
    )
    return thermo.ParametricSystem(
        protocol,
        thermo.LinearDrive(2 * SIGMA_Z, [drive]),
        thermo.DetailedBalancedFamily([JumpSpec(0, 1, 0.6)]),
    )


def random_system(seed, dim=3, **kw):
    return random_driven_system(np.random.default_rng(seed), dim, **kw)


# ---------------------------------------------------------------- temperature and protocol


def test_temperature_constant_when_alpha_vanishes():
    T = thermo.temperature_profile(0.3, 1.0, lambda t: 0.0)
    assert [T(t) for t in (0.0, 0.4, 1.0)] == [0.3, 0.3, 0.3]


def test_temperature_reaches_hot_bath_at_half_cycle():
    tau = 100.0
    T = thermo.temperature_profile(0.2, 2.0, sin2(tau)[0])
    assert T(tau / 2) == pytest.approx(2.0, rel=1e-15)
    assert T(0.0) == pytest.approx(0.2) and T(tau) == pytest.approx(0.2)


def test_temperature_half_weight():
    assert thermo.temperature_profile(1.0, 3.0, lambda t: 0.5)(0.0) == pytest.approx(1.5, rel=1e-15)


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_temperature_monotone_in_alpha(a, b):
    Ta = thermo.temperature_profile(0.4, 1.7, lambda t: a)(0.0)
    Tb = thermo.temperature_profile(0.4, 1.7, lambda t: b)(0.0)
    assert 0.4 - 1e-15 <= Ta <= 1.7 + 1e-15
    if a < b:
        assert Ta <= Tb


def test_temperature_rejects_alpha_out_of_range():
    T = thermo.temperature_profile(0.2, 2.0, lambda t: 1.5)
    with pytest.raises(DomainError):
        T(0.0)
    with pytest.raises(DomainError):
        thermo.temperature_profile(2.0, 1.0, lambda t: 0.0)


def test_protocol_beta_matches_temperature():
    tau = 7.0
    a, a_dot = sin2(tau)
    pr = thermo.Protocol(tau=tau, T_c=0.3, T_h=1.2, alpha=a, mechanical=lambda t: np.zeros(1), alpha_dot=a_dot)
    T = thermo.temperature_profile(0.3, 1.2, a)
    for t in np.linspace(0, tau, 9):
        assert pr.beta(t) == pytest.approx(1.0 / T(t), rel=1e-14)
    h = 1e-5
    t = 1.3
    assert pr.beta_dot(t) == pytest.approx((pr.beta(t + h) - pr.beta(t - h)) / (2 * h), rel=1e-8)
    assert pr.eta_C == pytest.approx(0.75)


@pytest.mark.parametrize(
    "kw",
    [dict(tau=0.0), dict(tau=-1.0), dict(T_c=2.0, T_h=1.0), dict(T_c=0.0)],
)
def test_protocol_rejects_bad_parameters(kw):
    args = dict(tau=1.0, T_c=0.5, T_h=1.0, alpha=lambda t: 0.0, mechanical=lambda t: np.zeros(1))
    args.update(kw)
    with pytest.raises(DomainError):
        thermo.Protocol(**args)


def test_protocol_validate_detects_open_curve():
    pr = thermo.Protocol(tau=1.0, T_c=0.5, T_h=1.0, alpha=sin2(1.0)[0], mechanical=lambda t: np.array([t]))
    with pytest.raises(PreconditionError):
        pr.validate()


def test_protocol_validate_detects_nonzero_end_speed():
    pr = thermo.Protocol(
        tau=1.0, T_c=0.5, T_h=1.0,
        alpha=lambda t: math.sin(math.pi * t) ** 2, mechanical=lambda t: np.array([math.sin(2 * math.pi * t)]),
    )
    with pytest.raises(PreconditionError):
        pr.validate()


def test_protocol_validate_detects_alpha_range():
    pr = thermo.Protocol(
        tau=1.0, T_c=0.5, T_h=1.0,
        alpha=lambda t: 2 * math.sin(math.pi * t) ** 2, mechanical=lambda t: np.zeros(1),
    )
    with pytest.raises(PreconditionError):
        pr.validate()


@given(st.integers(0, 2**31))
def test_random_protocols_are_valid(seed):
    pr = thermo.random_protocol(np.random.default_rng(seed), 2, tau=3.0)
    pr.validate()
    assert not pr.uses_finite_differences
    for t in (0.4, 1.7, 2.9):
        h = 1e-6
        fd = (np.asarray(pr.mechanical(t + h)) - np.asarray(pr.mechanical(t - h))) / (2 * h)
        np.testing.assert_allclose(pr.mechanical_rate(t), fd, atol=1e-8)
        fd_a = (pr.alpha(t + h) - pr.alpha(t - h)) / (2 * h)
        assert pr.alpha_rate(t) == pytest.approx(fd_a, abs=1e-8)


def test_warped_alpha_rejects_fold():
    with pytest.raises(DomainError):
        thermo.warped_alpha(1.0, 1.0)


def test_fourier_drive_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        thermo.fourier_drive([[1.0, 2.0]], [[1.0]], 1.0)


def test_finite_difference_fallback_is_flagged_and_accurate():
    exact = thermo.evaluate(qubit_system(SIGMA_X), nodes=65, rtol=1e-6)
    approx = thermo.evaluate(qubit_system(SIGMA_X, fd=True), nodes=65, rtol=1e-6)
    assert approx.fd_derivatives and not exact.fd_derivatives
    for k in ("P_w", "sigma_dot", "DeltaP_w", "DeltaI_w"):
        assert getattr(approx, k) == pytest.approx(getattr(exact, k), rel=1e-6)


# ---------------------------------------------------------------- quadrature


@pytest.mark.parametrize("n", [3, 5, 33, 257])
def test_simpson_exact_for_cubics(n):
    t = np.linspace(0, 2.0, n)
    vals = 1 + t - 3 * t**2 + 0.5 * t**3
    assert float(thermo.simpson(vals, 2.0)) == pytest.approx(2 + 2 - 8 + 2, abs=1e-13)


@pytest.mark.parametrize("n", [2, 4])
def test_simpson_rejects_even_nodes(n):
    with pytest.raises(ValueError):
        thermo.simpson_weights(n, 1.0)


def test_adaptive_simpson_converges_and_caps():
    val, t, _ = thermo.adaptive_simpson(lambda x: math.exp(math.sin(x)), 2 * math.pi, nodes=9, rtol=1e-12)
    assert float(val[0]) == pytest.approx(2 * math.pi * 1.2660658777520082, rel=1e-12)
    with pytest.raises(ConvergenceError):
        thermo.adaptive_simpson(lambda x: math.sin(200 * x) ** 2 * x, 10.0, nodes=5, rtol=1e-12, max_nodes=65)


# ---------------------------------------------------------------- inner products


def curves(system):
    pr = system.protocol

    def gen(t):
        return system.snapshot(t).generator

    def centered(fn):
        return thermo.OperatorCurve(pr, lambda t: delta_centered(gen(t).stationary, fn(t)))

    return gen, centered


def test_inner_product_of_zero_curve():
    system = random_system(1)
    gen, centered = curves(system)
    zero = centered(lambda t: np.zeros((3, 3)))
    other = centered(lambda t: system.snapshot(t).hamiltonian_dot.matrix)
    assert thermo.inner_product(gen, zero, other, nodes=17) == 0.0


@pytest.mark.parametrize("seed", range(3))
def test_inner_products_symmetric_and_ordered(seed):
    rng = np.random.default_rng(100 + seed)
    system = random_system(seed)
    a0, a1, b0 = (random_hermitian(rng, 3) for _ in range(3))
    tau = system.protocol.tau
    gen, centered = curves(system)
    A = centered(lambda t: a0 + math.cos(2 * math.pi * t / tau) * a1)
    B = centered(lambda t: b0 * math.sin(math.pi * t / tau))
    kw = dict(nodes=17, rtol=1e-6)
    ab = thermo.inner_product(gen, A, B, **kw)
    ba = thermo.inner_product(gen, B, A, **kw)
    assert ab == pytest.approx(ba, rel=1e-12)
    aa = thermo.inner_product(gen, A, A, **kw)
    aa_prime = thermo.inner_product_prime(gen, A, A, **kw)
    assert aa_prime >= aa >= 0
    assert ab**2 <= aa * thermo.inner_product(gen, B, B, **kw) * (1 + 1e-12)


def test_inner_products_coincide_on_commuting_curve():
    system = qubit_system(SIGMA_Z)
    gen, centered = curves(system)
    A = centered(lambda t: system.snapshot(t).hamiltonian_dot.matrix)
    log_ = thermo.inner_product(gen, A, A, nodes=33)
    arith = thermo.inner_product_prime(gen, A, A, nodes=33)
    assert arith == pytest.approx(log_, rel=1e-10)


def test_report_forms_match_inner_products():
    system = random_system(5)
    rep = thermo.evaluate(system, nodes=65, rtol=1e-8)
    gen, centered = curves(system)
    dhd = centered(lambda t: system.snapshot(t).hamiltonian_dot.matrix)
    kw = dict(nodes=65, rtol=1e-8)
    assert thermo.inner_product(gen, dhd, dhd, **kw) == pytest.approx(rep.hd_hd, rel=1e-7)
    assert thermo.inner_product_prime(gen, dhd, dhd, **kw) == pytest.approx(rep.hd_hd_prime, rel=1e-7)
    assert rep.DeltaP_w == pytest.approx(2 * rep.hd_hd_prime, rel=1e-15)


# ---------------------------------------------------------------- cycle functionals


def test_static_protocol_produces_nothing():
    rep = thermo.evaluate(static_system(), nodes=9)
    for k in ("sigma_dot", "P_w", "W_ad", "DeltaP_w", "DeltaI_w"):
        assert getattr(rep, k) == 0.0
    assert not rep.operating
    assert math.isnan(rep.f_value) and math.isnan(rep.eta_Q)
    a_P, a_dP, eta1 = thermo.expansion_coefficients(rep, t_eq=1.0)
    assert a_P == 0.0 and a_dP == 0.0 and math.isnan(eta1)


def test_temperature_only_driving_of_oscillator():
    tau, dim = 20.0, 25
    a, a_dot = sin2(tau)
    pr = thermo.Protocol(
        tau=tau, T_c=0.3, T_h=0.6, alpha=a, mechanical=lambda t: np.ones(1),
        alpha_dot=a_dot, mechanical_dot=lambda t: np.zeros(1),
    )
    system = thermo.ParametricSystem(
        pr,
        thermo.LinearDrive(np.diag(np.arange(dim) + 0.5), []),
        lambda H, beta: build_oscillator(1.0, 1.0 / beta, 0.5, dim, tail_tol=None),
        hamiltonian_dot=lambda lam, lam_dot: np.zeros((dim, dim)),
    )
    rep = thermo.evaluate(system, nodes=65, rtol=1e-9)
    assert rep.W_ad == 0.0
    assert rep.sigma_dot > 0

    def reduced(t):
        snap = system.snapshot(t)
        L = snap.generator
        dh = delta_centered(L.stationary, snap.hamiltonian)
        return snap.beta_dot**2 * thermo.instantaneous_form(L, dh, dh)

    val, _, _ = thermo.adaptive_simpson(reduced, tau, nodes=65, rtol=1e-10)
    assert rep.sigma_dot == pytest.approx(float(val[0]) / tau, rel=1e-8)


@pytest.mark.parametrize("seed", range(4))
def test_slow_driving_invariants_on_random_engines(seed):
    rep = thermo.evaluate(random_system(seed, dim=2 + seed % 2), nodes=65, rtol=1e-7)
    assert rep.sigma_dot >= -1e-12
    assert 2 * rep.DeltaI_w >= -1e-12
    assert rep.DeltaP_w - 2 * rep.DeltaI_w >= -1e-12
    assert rep.DeltaI_w == pytest.approx(rep.DeltaI_w_skew, rel=1e-9, abs=1e-15)
    # second law bookkeeping: T_c sigma = eta_C J_q - P_w with J_q computed directly
    lhs = rep.T_c * rep.sigma_dot
    rhs = rep.eta_C * rep.J_q_direct - rep.P_w
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-12 * abs(rep.eta_C * rep.J_q_direct))
    assert rep.P_w == pytest.approx(rep.P_w_direct, rel=1e-9, abs=1e-13)
    assert rep.tur_residual >= -1e-9 * rep.tur_scale
    if rep.engine_flag:
        assert rep.eta <= rep.eta_C + 1e-12
        assert rep.eta <= rep.eta_Q + 1e-12
        assert rep.eta_Q <= rep.eta_cl + 1e-12


def test_heat_flux_routes_agree():
    identity, direct = thermo.heat_flux(random_system(8), nodes=65)
    assert identity == pytest.approx(direct, rel=1e-8)


def test_wrappers_match_report():
    system = random_system(9, dim=2)
    rep = thermo.evaluate(system, nodes=65)
    assert thermo.entropy_production_rate(system, nodes=65) == rep.sigma_dot
    assert thermo.average_power(system, nodes=65) == rep.P_w
    assert thermo.power_fluctuations(system, nodes=65) == (rep.DeltaP_w, rep.DeltaI_w)


def test_finite_time_correction_scales_inversely_with_duration():
    lag = []
    for tau in (1e2, 1e3, 1e4):
        rep = thermo.evaluate(random_system(4, dim=2, tau=tau), nodes=65, rtol=1e-9)
        lag.append((rep.P_w * tau + rep.W_ad) * tau)
        assert rep.W_ad == pytest.approx(-rep.P_W * tau, rel=1e-14)
    assert lag[1] == pytest.approx(lag[0], rel=1e-6)
    assert lag[2] == pytest.approx(lag[0], rel=1e-6)


def test_time_grid_doubling_is_converged():
    system = random_system(2)
    integ = thermo.TimeIntegrator(system, nodes=257)
    rep = integ.refine(rtol=1e-7)
    coarse = integ.report()
    finer = thermo.TimeIntegrator(system, nodes=2 * len(integ.t) - 1).report()
    assert thermo.scalars_close(coarse.scalars(), finer.scalars(), 1e-7)
    assert rep.meta["nodes"] >= 513


# ---------------------------------------------------------------- adiabatic work


def test_adiabatic_work_vanishes_without_mechanical_driving():
    assert thermo.adiabatic_work(static_system()) == 0.0


def test_adiabatic_work_vanishes_isothermally():
    tau = 10.0
    mech, mech_dot = thermo.fourier_drive([[0.4, -0.2]], [[0.3, 0.1]], tau)
    pr = thermo.Protocol(
        tau=tau, T_c=0.7, T_h=0.7 + 1e-9, alpha=lambda t: 0.0, mechanical=mech,
        alpha_dot=lambda t: 0.0, mechanical_dot=mech_dot,
    )
    system = thermo.ParametricSystem(
        pr, thermo.LinearDrive(np.diag([0.0, 1.0]), [SIGMA_X]), thermo.DetailedBalancedFamily([JumpSpec(0, 1, 0.5)])
    )
    assert abs(thermo.adiabatic_work(system)) < 1e-12


def test_adiabatic_work_of_oscillator_against_quadrature():
    p = oscillator.OscillatorParams(Gamma=1.0, T_c=0.6)
    dim = oscillator.required_dim(p)
    W = thermo.adiabatic_work(oscillator.OscillatorSystem(p, dim), rtol=1e-11)
    oracle, _ = integrate.quad(oscillator.adwork_integrand, 0, p.tau, args=(p,), epsabs=1e-13, epsrel=1e-11, limit=500)
    assert W == pytest.approx(oracle, rel=1e-9)


# ---------------------------------------------------------------- fluctuations and relaxation time


def test_commuting_driving_has_no_quantum_correction():
    rep = thermo.evaluate(qubit_system(SIGMA_Z), nodes=65)
    assert abs(rep.DeltaI_w) <= 1e-15 * rep.DeltaP_w
    _, a_dP, _ = thermo.expansion_coefficients(rep, t_eq=1.0)
    assert a_dP == pytest.approx(rep.DeltaP_w / (1.0 / rep.tau), rel=1e-15)


def test_noncommuting_driving_has_quantum_correction():
    rep = thermo.evaluate(qubit_system(SIGMA_X), nodes=65)
    assert rep.DeltaI_w > 1e-6 * rep.DeltaP_w


def test_relaxation_timescale_absent_for_commuting_power():
    L = build_detailed_balanced(np.diag([0.0, 1.0]), 1.0, [JumpSpec(0, 1, 0.4)])
    assert thermo.relaxation_timescale(L, np.diag([0.3, -0.1])) is None


def test_relaxation_timescale_reassembles_quantum_correction():
    system = qubit_system(SIGMA_X)
    tau = system.protocol.tau

    def pair(t):
        snap = system.snapshot(t)
        L, hd = snap.generator, snap.hamiltonian_dot
        st_ = L.stationary
        dhd = delta_centered(st_, hd)
        direct = thermo.instantaneous_form(L, dhd, dhd, "arith") - thermo.instantaneous_form(L, dhd, dhd, "log")
        t_eq = thermo.relaxation_timescale(L, hd)
        via = 0.0 if t_eq is None else t_eq * skew_covariance(st_, hd, hd)
        return [direct, via]

    (direct, via), _, _ = thermo.adaptive_simpson(pair, tau, nodes=65, rtol=1e-10)
    assert via == pytest.approx(direct, rel=1e-8)
    rep = thermo.evaluate(system, nodes=65, rtol=1e-10)
    assert via / tau == pytest.approx(rep.DeltaI_w, rel=1e-8)


def test_relaxation_timescale_of_oscillator_follows_damping():
    omega, dim = 1.1, 40
    hd = oscillator_power_operator(0.3, dim)
    times = {}
    for G in (0.5, 1.0, 2.0):
        times[G] = thermo.relaxation_timescale(build_oscillator(omega, 0.8, G, dim), hd)
        assert times[G] == pytest.approx(G / (G * G + 4 * omega * omega), rel=1e-8)
    # doubling the damping does not halve the coherence relaxation time
    assert times[1.0] / times[0.5] == pytest.approx(2 * (0.25 + 4 * omega**2) / (1 + 4 * omega**2), rel=1e-8)


def test_relaxation_timescale_halves_when_whole_generator_doubles():
    rng = np.random.default_rng(3)
    H = np.diag([0.0, 0.9, 2.1]) + random_hermitian(rng, 3, 0.2)
    L = build_detailed_balanced(H, 0.9, [JumpSpec(0, 1, 0.4), JumpSpec(1, 2, 0.6), JumpSpec(0, 2, 0.3)])
    doubled = Lindbladian(2 * L.hamiltonian.matrix, [(j, 2 * r) for j, r in L.jumps], stationary=L.stationary)
    hd = random_hermitian(rng, 3)
    assert thermo.relaxation_timescale(doubled, hd) == pytest.approx(0.5 * thermo.relaxation_timescale(L, hd), rel=1e-8)


# ---------------------------------------------------------------- efficiencies and bounds


def base_report(**kw):
    args = dict(
        T_c=0.5, T_h=2.0, tau=10.0, W=-1.0, cross=0.02, sigma_dot=0.1, DeltaP_w=0.3, DeltaI_w=0.05,
        energy_scale=1.0,
    )
    args.update(kw)
    return thermo.assemble_report(**args)


def test_report_assembly_closed_forms():
    rep = base_report()
    P_w = 0.1 - 0.02
    assert rep.P_W == pytest.approx(0.1) and rep.P_w == pytest.approx(P_w)
    assert rep.w_avg == pytest.approx(-P_w * 10)
    assert rep.eta == pytest.approx(0.75 * P_w / (0.5 * 0.1 + P_w))
    f = (1 - 1.0 / (P_w * 10)) ** 2
    assert rep.f_value == pytest.approx(f)
    assert rep.eta_Q == pytest.approx(0.75 / (1 + 2 * 0.5 * f * P_w / (0.3 - 0.1)))
    assert rep.eta_cl == pytest.approx(0.75 / (1 + 2 * 0.5 * f * P_w / 0.3))
    assert rep.eta_PS == pytest.approx(0.75 / (1 + 2 * 0.5 * P_w / 0.3))
    assert rep.tur_residual == pytest.approx((0.3 - 0.1) * 0.1 - 2 * f * P_w**2)
    assert rep.J_q == pytest.approx((0.5 * 0.1 + P_w) / 0.75)
    d = rep.as_dict()
    assert d["ratio_2dIw_over_dPw"] == pytest.approx(2 * 0.05 / 0.3)


def test_zero_power_gives_zero_efficiency():
    rep = base_report(W=-0.2, cross=0.02)
    assert rep.P_w == 0.0 and rep.eta == 0.0


def test_non_operating_cycle_flags_undefined_bound():
    rep = base_report(W=-0.2, cross=0.02, energy_scale=1.0)
    assert not rep.operating
    assert math.isnan(rep.f_value) and math.isnan(rep.eta_Q) and math.isnan(rep.eta_cl)
    assert math.isfinite(rep.tur_residual)


def test_time_symmetric_cycle_reduces_to_reduced_variance_form():
    rep = thermo.evaluate(saturating_qubit(), nodes=65)
    assert abs(rep.W_ad) < 1e-12 * abs(rep.w_avg)
    assert rep.f_value == pytest.approx(1.0, abs=1e-12)
    other = rep.eta_C / (1 + 2 * rep.T_c * rep.P_w / (rep.DeltaP_w - 2 * rep.DeltaI_w))
    assert rep.eta_Q == pytest.approx(other, rel=1e-12)


def test_saturating_qubit_attains_tur():
    rep = thermo.evaluate(saturating_qubit())
    assert abs(rep.tur_residual) <= 1e-6 * rep.tur_scale
    with pytest.raises(ValueError):
        saturating_qubit(c=1.0)


def test_expansion_coefficients_definitions():
    rep = base_report()
    t_eq = 0.5
    eps = t_eq / rep.tau
    a_P, a_dP, eta1 = thermo.expansion_coefficients(rep, t_eq)
    assert a_P == pytest.approx(-0.02 / eps)
    assert a_dP == pytest.approx((0.3 - 0.1) / eps)
    assert eta1 == pytest.approx(0.75 * (1 - eps * 2 * 0.5 * a_P**2 / (0.1 * a_dP)))
    assert math.isnan(thermo.expansion_coefficients(base_report(W=1.0), t_eq)[2])
