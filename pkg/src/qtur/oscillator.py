"""Single-ion engine: frequency- and temperature-modulated damped oscillator.

Two evaluation routes live here:

* closed-form time integrands for power, power fluctuations, entropy
  production, the quantum correction and the adiabatic work, integrated with
  adaptive Gauss-Kronrod quadrature (:func:`evaluate`);
* a matrix model in a truncated Fock space that feeds the generic
  slow-driving pipeline of :mod:`qtur.thermo` (:func:`evaluate_matrix`).

All closed forms are written in ``x = exp(-beta*omega)`` so they stay finite
however cold the bath gets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from . import thermo
from .errors import ConvergenceError, DomainError
from .lindblad import bose_einstein, build_oscillator, oscillator_power_operator

__all__ = [
    "OscillatorParams",
    "reference_protocol",
    "power_integrand",
    "fluct_integrand",
    "sigma_integrand",
    "qcorr_integrand",
    "adwork_integrand",
    "evaluate",
    "OscillatorSystem",
    "evaluate_matrix",
    "required_dim",
]


@dataclass(frozen=True)
class OscillatorParams:
    """Engine parameters; ``t_eq = 1 / Gamma``."""

    omega0: float = 1.0
    T_c: float = 0.2
    T_h: float = 2.0
    Gamma: float = 1.0
    tau: float = 100.0

    def __post_init__(self):
        for name in ("omega0", "T_c", "T_h", "Gamma", "tau"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise DomainError(f"{name} must be finite and positive, got {val!r}")
        if not self.T_c < self.T_h:
            raise DomainError(f"need T_c < T_h, got T_c={self.T_c}, T_h={self.T_h}")

    @property
    def t_eq(self) -> float:
        return 1.0 / self.Gamma


def _omega(t, p: OscillatorParams):
    s = 2.0 * np.pi * t / p.tau
    return p.omega0 * (1.0 + 0.5 * np.sin(s) + 0.25 * np.sin(2.0 * s + np.pi))


def _omega_dot(t, p: OscillatorParams):
    s = 2.0 * np.pi * t / p.tau
    # sin(2s + pi) = -sin(2s) exactly; using the identity keeps omega_dot(0) = 0 bitwise
    return p.omega0 * (np.pi / p.tau) * (np.cos(s) - np.cos(2.0 * s))


def _alpha(t, p: OscillatorParams):
    return np.sin(np.pi * t / p.tau) ** 2


def _alpha_dot(t, p: OscillatorParams):
    return (np.pi / p.tau) * np.sin(2.0 * np.pi * t / p.tau)


def reference_protocol(params: OscillatorParams) -> thermo.Protocol:
    """Frequency ``omega(t)`` and bath temperature ``T(t)`` of the reference cycle.

    ``omega = omega0 (1 + sin(2 pi t/tau)/2 + sin(4 pi t/tau + pi)/4)`` and
    ``alpha = sin^2(pi t/tau)``; the mechanical parameter is ``omega``.
    """
    p = params
    return thermo.Protocol(
        tau=p.tau,
        T_c=p.T_c,
        T_h=p.T_h,
        alpha=lambda t: _alpha(t, p),
        mechanical=lambda t: np.atleast_1d(_omega(t, p)),
        alpha_dot=lambda t: _alpha_dot(t, p),
        mechanical_dot=lambda t: np.atleast_1d(_omega_dot(t, p)),
    )


def _state(t, p: OscillatorParams):
    w = _omega(t, p)
    wd = _omega_dot(t, p)
    beta = (p.T_h + (p.T_c - p.T_h) * _alpha(t, p)) / (p.T_c * p.T_h)
    beta_dot = (p.T_c - p.T_h) * _alpha_dot(t, p) / (p.T_c * p.T_h)
    return w, wd, beta, beta_dot


def _bose_terms(y):
    """Return ``N(N+1)``, ``coth(y/2)/2`` and ``(1+x^2)/(2(1-x)^2)`` for ``y = beta*omega``."""
    em = -np.expm1(-y)  # 1 - x
    x = np.exp(-y)
    nn1 = x / (em * em)  # e^y/(e^y-1)^2
    half_coth = 0.5 * (1.0 + x) / em  # e^y sinh(y)/(e^y-1)^2
    cosh_term = 0.5 * (1.0 + x * x) / (em * em)  # e^y cosh(y)/(e^y-1)^2
    return nn1, half_coth, cosh_term


def _skew_factor(y):
    """``(e^{2y}-1)(y coth y - 1) / (2 y (e^y-1)^2)``, stable for all ``y > 0``."""
    y = np.asarray(y, dtype=float)
    x = np.exp(-y)
    em = -np.expm1(-y)
    # y coth y - 1, with its series where the subtraction cancels
    small = y < 1e-2
    ys = np.where(small, 1.0, y)
    direct = ys / np.tanh(ys) - 1.0
    y2 = y * y
    series = y2 / 3.0 - y2 * y2 / 45.0 + 2.0 * y2**3 / 945.0
    ycoth = np.where(small, series, direct)
    # (e^{2y}-1)/(e^y-1)^2 = (1+x)/(1-x)
    return (1.0 + x) / em * ycoth / (2.0 * y)


def power_integrand(t, params: OscillatorParams):
    """Finite-time power correction; ``P_w = -W/tau - (1/tau) int power_integrand``."""
    p = params
    w, wd, b, bd = _state(t, p)
    nn1, half_coth, _ = _bose_terms(b * w)
    G = p.Gamma
    return wd * (bd * w + b * wd) * nn1 / G + G * wd * wd * half_coth / (w * (G * G + 4 * w * w))


def fluct_integrand(t, params: OscillatorParams):
    """Integrand of the time-averaged work variance ``Delta P_w``."""
    p = params
    w, wd, b, _ = _state(t, p)
    nn1, _, cosh_term = _bose_terms(b * w)
    G = p.Gamma
    return 2.0 * wd * wd * (nn1 / G + G * cosh_term / (G * G + 4 * w * w))


def sigma_integrand(t, params: OscillatorParams):
    """Integrand of the entropy production rate."""
    p = params
    w, wd, b, bd = _state(t, p)
    nn1, half_coth, _ = _bose_terms(b * w)
    G = p.Gamma
    flow = bd * w + b * wd
    return flow * flow * nn1 / G + b * G * wd * wd * half_coth / (w * (G * G + 4 * w * w))


def qcorr_integrand(t, params: OscillatorParams):
    """Integrand of the quantum (skew-information) correction ``Delta I_w``."""
    p = params
    w, wd, b, _ = _state(t, p)
    G = p.Gamma
    return wd * wd * G * _skew_factor(b * w) / (G * G + 4 * w * w)


def adwork_integrand(t, params: OscillatorParams):
    """``omega_dot / (exp(beta omega) - 1)``.

    This omits the zero-point part ``omega_dot / 2`` of ``tr(pi dH/dt)``,
    which integrates to zero over a closed cycle.
    """
    w, wd, b, _ = _state(t, params)
    return wd * bose_einstein(b * w)


_INTEGRANDS = {
    "power": power_integrand,
    "fluct": fluct_integrand,
    "sigma": sigma_integrand,
    "qcorr": qcorr_integrand,
    "adwork": adwork_integrand,
}


def _quad(fn, p, tol):
    val, err, info = _quad_full(fn, p, tol)
    return val


def _quad_full(fn, p, tol):
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(
                fn, 0.0, p.tau, args=(p,), epsabs=tol * 1e-4, epsrel=tol, limit=500
            )
        except integrate.IntegrationWarning as exc:
            raise ConvergenceError(f"quadrature of {fn.__name__} did not converge: {exc}") from exc
    return val, err, None


def integrals(params: OscillatorParams, tol: float = 1e-9) -> dict:
    """Cycle integrals ``int_0^tau`` of the five closed-form integrands."""
    return {name: _quad(fn, params, tol) for name, fn in _INTEGRANDS.items()}


def evaluate(params: OscillatorParams, tol: float = 1e-9) -> thermo.EngineReport:
    """Engine report from the closed-form integrands."""
    p = params
    ints = integrals(p, tol)
    tau = p.tau
    W = ints["adwork"]
    return thermo.assemble_report(
        T_c=p.T_c,
        T_h=p.T_h,
        tau=tau,
        W=W,
        cross=ints["power"] / tau,
        sigma_dot=ints["sigma"] / tau,
        DeltaP_w=ints["fluct"] / tau,
        DeltaI_w=ints["qcorr"] / tau,
        energy_scale=p.omega0 * 1.75,
    )


class OscillatorSystem(thermo.DrivenSystem):
    """Reference cycle of the oscillator as a truncated matrix model."""

    def __init__(self, params: OscillatorParams, dim: int):
        self.params = params
        self.dim = int(dim)
        self.protocol = reference_protocol(params)

    def snapshot(self, t: float) -> thermo.Snapshot:
        p = self.params
        w, wd, b, bd = _state(t, p)
        gen = build_oscillator(w, 1.0 / b, p.Gamma, self.dim, tail_tol=None)
        return thermo.Snapshot(
            hamiltonian=gen.hamiltonian,
            hamiltonian_dot=oscillator_power_operator(wd, self.dim),
            generator=gen,
            beta=b,
            beta_dot=bd,
            alpha=_alpha(t, p),
            alpha_dot=_alpha_dot(t, p),
        )

    def tail(self, nodes: int = 257) -> float:
        """Largest Gibbs weight beyond the truncation over the cycle."""
        t = np.linspace(0.0, self.params.tau, nodes)
        w, _, b, _ = _state(t, self.params)
        return float(np.exp(-np.min(b * w) * self.dim))


def required_dim(params: OscillatorParams, tail_tol: float = 1e-12, nodes: int = 257) -> int:
    """Smallest Fock dimension whose Gibbs tail stays below ``tail_tol`` all cycle."""
    t = np.linspace(0.0, params.tau, nodes)
    w, _, b, _ = _state(t, params)
    return int(math.ceil(-math.log(tail_tol) / float(np.min(b * w))))


def evaluate_matrix(
    params: OscillatorParams,
    *,
    start_dim: int = 30,
    step: int = 10,
    max_dim: int = 400,
    tail_tol: float = 1e-12,
    dim_rtol: float = 1e-8,
    dim_nodes: int = 65,
    nodes: int = 257,
    rtol: float = 1e-7,
    max_nodes: int = 4097,
    dim: int | None = None,
) -> thermo.EngineReport:
    """Engine report from the generic matrix pipeline, with Fock-dimension escalation.

    Starting at ``start_dim`` the dimension grows by ``step`` until the Gibbs
    tail is below ``tail_tol`` everywhere on the cycle and every reported
    scalar moves by less than ``dim_rtol`` (relative) between consecutive
    dimensions. Dimensions are compared on a coarse grid of ``dim_nodes``
    points (truncation error does not depend on time resolution); the
    accepted one is then integrated from ``nodes`` points with doubling.
    Pass ``dim`` to pin the truncation.
    """
    if dim is not None:
        rep = thermo.evaluate(OscillatorSystem(params, dim), nodes=nodes, rtol=rtol, max_nodes=max_nodes)
        return rep.with_meta(fock_dim=int(dim))
    d = start_dim
    while OscillatorSystem(params, d).tail(nodes) >= tail_tol:
        d += step
        if d > max_dim:
            raise ConvergenceError(f"Fock dimension exceeded {max_dim} before the tail fell below {tail_tol}")
    prev_vals = thermo.TimeIntegrator(OscillatorSystem(params, d), nodes=dim_nodes).report().scalars()
    while True:
        vals = thermo.TimeIntegrator(OscillatorSystem(params, d + step), nodes=dim_nodes).report().scalars()
        d += step
        if thermo.scalars_close(prev_vals, vals, dim_rtol):
            break
        if d + step > max_dim:
            raise ConvergenceError(f"observables still moving at Fock dimension {max_dim}")
        prev_vals = vals
    rep = thermo.evaluate(OscillatorSystem(params, d), nodes=nodes, rtol=rtol, max_nodes=max_nodes)
    return rep.with_meta(fock_dim=d)
