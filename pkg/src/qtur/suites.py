"""Seeded model generators and invariant suites shared by the CLI and tests.

Every suite returns a :class:`SuiteResult` with pass/fail counts, the worst
margin seen (negative means violated) and the full inputs of each failing
case so it can be replayed from its own seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from . import oscillator, thermo
from .lindblad import (
    JumpSpec,
    Lindbladian,
    build_detailed_balanced,
    build_oscillator,
    detailed_balance_residual,
    heisenberg_propagate,
    spectral_gap,
    theta_integral,
)
from .opalg import HermitianOperator, delta_centered, quadratic_form

__all__ = [
    "SuiteResult",
    "random_hermitian",
    "random_specs",
    "random_driven_system",
    "saturating_qubit",
    "SUITES",
    "run_suite",
]


@dataclass
class SuiteResult:
    name: str
    count: int = 0
    passed: int = 0
    worst_margin: float = math.inf
    failures: list = field(default_factory=list)

    def record(self, margin: float, inputs: dict) -> None:
        self.count += 1
        if not math.isnan(margin):
            self.worst_margin = min(self.worst_margin, margin)
        if margin >= 0.0:
            self.passed += 1
        else:
            self.failures.append({"margin": margin, "inputs": inputs})

    @property
    def ok(self) -> bool:
        return self.count > 0 and self.passed == self.count

    def as_dict(self) -> dict:
        return {
            "count": self.count,
            "passed": self.passed,
            "failed": self.count - self.passed,
            "worst_margin": self.worst_margin,
            "ok": self.ok,
            "failures": self.failures,
        }


def _case_rngs(seed: int, count: int):
    for k, child in enumerate(np.random.SeedSequence(seed).spawn(count)):
        yield k, int(child.generate_state(1)[0]), np.random.default_rng(child)


def random_hermitian(rng: np.random.Generator, dim: int, scale: float = 1.0) -> np.ndarray:
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return scale * (a + a.conj().T) / (2.0 * math.sqrt(2 * dim))


def random_levels(rng: np.random.Generator, dim: int, min_gap: float = 0.4) -> np.ndarray:
    return np.cumsum(np.concatenate([[0.0], min_gap + rng.uniform(0.0, 1.0, dim - 1)]))


def random_specs(rng: np.random.Generator, dim: int, low: float = 0.2, high: float = 1.5):
    """Transitions between every pair of levels with random upward rates."""
    return [JumpSpec(i, j, float(rng.uniform(low, high))) for i in range(dim) for j in range(i + 1, dim)]


def random_driven_system(rng: np.random.Generator, dim: int, *, n_drives: int = 2, tau: float = 50.0):
    """Random detailed-balanced engine with non-commuting drives.

    Levels keep a gap of at least 0.4 while the drives are bounded so the
    instantaneous spectrum never becomes degenerate.
    """
    h0 = np.diag(random_levels(rng, dim)).astype(complex)
    drives = [random_hermitian(rng, dim, 0.25) for _ in range(n_drives)]
    T_c = float(rng.uniform(0.2, 1.0))
    T_h = T_c * float(rng.uniform(1.5, 4.0))
    protocol = thermo.random_protocol(rng, n_drives, tau=tau, T_c=T_c, T_h=T_h, modes=2, amplitude=0.4)
    specs = random_specs(rng, dim)
    return thermo.ParametricSystem(protocol, thermo.LinearDrive(h0, drives), thermo.DetailedBalancedFamily(specs))


def saturating_qubit(*, T_c=0.5, T_h=1.5, tau=50.0, K=0.5, c=0.2, rate=0.7):
    """Commuting qubit whose power operator stays proportional to the entropy flow.

    The gap is ``eps(t) = K / (beta(t) - c)`` so ``beta eps = c eps + K``:
    ``dPhi = c dH`` at all times, the adiabatic work vanishes and the TUR
    holds with equality. Requires ``c < 1/T_h``.
    """
    if not c < 1.0 / T_h:
        raise ValueError("need c < 1/T_h so the gap stays finite and positive")
    alpha = lambda t: math.sin(math.pi * t / tau) ** 2  # noqa: E731
    alpha_dot = lambda t: (math.pi / tau) * math.sin(2.0 * math.pi * t / tau)  # noqa: E731
    beta = lambda t: (T_h + (T_c - T_h) * alpha(t)) / (T_c * T_h)  # noqa: E731
    beta_dot = lambda t: (T_c - T_h) * alpha_dot(t) / (T_c * T_h)  # noqa: E731
    protocol = thermo.Protocol(
        tau=tau,
        T_c=T_c,
        T_h=T_h,
        alpha=alpha,
        mechanical=lambda t: np.array([K / (beta(t) - c)]),
        alpha_dot=alpha_dot,
        mechanical_dot=lambda t: np.array([-K * beta_dot(t) / (beta(t) - c) ** 2]),
    )
    sz = np.diag([0.5, -0.5]).astype(complex)
    return thermo.ParametricSystem(
        protocol,
        thermo.LinearDrive(np.zeros((2, 2)), [sz]),
        thermo.DetailedBalancedFamily([JumpSpec(0, 1, rate)]),
    )


def random_generator(rng: np.random.Generator, dim: int):
    """Random detailed-balanced generator with a non-diagonal Hamiltonian."""
    H = HermitianOperator(np.diag(random_levels(rng, dim)) + random_hermitian(rng, dim, 0.3))
    beta = float(rng.uniform(0.3, 3.0))
    return build_detailed_balanced(H, beta, random_specs(rng, dim))


# ---------------------------------------------------------------- suites


def _scale(*xs):
    return max(max(abs(x) for x in xs), 1e-300)


def suite_ordering(seed: int, count: int = 500, nodes: int = 33) -> SuiteResult:
    """``<<A,A>>' >= <<A,A>> >= 0`` for random curves along random cycles.

    Both forms are Simpson sums with positive weights on the same grid, so
    the ordering must hold for the discretised cycle average as well.
    """
    res = SuiteResult("ordering")
    for k, case_seed, rng in _case_rngs(seed, count):
        dim = (2, 3, 4)[k % 3]
        system = random_driven_system(rng, dim)
        a0, a1 = random_hermitian(rng, dim), random_hermitian(rng, dim)
        tau = system.protocol.tau
        ts = np.linspace(0.0, tau, nodes)
        vals = []
        for t in ts:
            L = system.snapshot(t).generator
            st = L.stationary
            a = delta_centered(st, a0 + math.sin(2 * math.pi * t / tau) * a1)
            r = theta_integral(L, a)
            vals.append((quadratic_form(st, r, a, "log"), quadratic_form(st, r, a, "arith")))
        log_form, arith_form = thermo.simpson(np.array(vals), tau) / tau
        scale = _scale(log_form, arith_form)
        margin = min(arith_form - log_form, log_form) + 1e-12 * scale
        res.record(margin / scale, {"case_seed": case_seed, "dim": dim, "log": log_form, "arith": arith_form})
    return res


def suite_inner_product(seed: int, count: int = 200) -> SuiteResult:
    """Linearity, symmetry, positivity and Cauchy-Schwarz of both forms at one time."""
    res = SuiteResult("inner-product")
    for k, case_seed, rng in _case_rngs(seed, count):
        dim = (2, 3, 4)[k % 3]
        L = random_generator(rng, dim)
        st = L.stationary
        a = delta_centered(st, random_hermitian(rng, dim))
        b = delta_centered(st, random_hermitian(rng, dim))
        c = float(rng.normal())
        worst = math.inf
        for mean in ("log", "arith"):
            aa = thermo.instantaneous_form(L, a, a, mean)
            bb = thermo.instantaneous_form(L, b, b, mean)
            ab = thermo.instantaneous_form(L, a, b, mean)
            ba = thermo.instantaneous_form(L, b, a, mean)
            lin = thermo.instantaneous_form(L, a * c + b, a, mean)
            scale = _scale(aa, bb, ab, lin)
            worst = min(
                worst,
                (1e-9 * scale - abs(ab - ba)) / scale,
                (aa + 1e-12 * scale) / scale,
                (1e-9 * scale - abs(lin - (c * aa + ba))) / scale,
                (aa * bb - ab * ab + 1e-9 * scale * scale) / (scale * scale),
            )
        res.record(worst, {"case_seed": case_seed, "dim": dim})
    return res


def suite_tur(seed: int, count: int = 100, nodes: int = 65, rtol: float = 1e-6, reports: list | None = None) -> SuiteResult:
    """``tur_residual >= -1e-9 scale`` on random qubit and qutrit engines.

    Evaluated reports are appended to ``reports`` when it is given.
    """
    res = SuiteResult("tur")
    for k, case_seed, rng in _case_rngs(seed, count):
        dim = (2, 3)[k % 2]
        system = random_driven_system(rng, dim)
        rep = thermo.evaluate(system, nodes=nodes, rtol=rtol)
        if reports is not None:
            reports.append(rep)
        margin = (rep.tur_residual + 1e-9 * rep.tur_scale) / max(rep.tur_scale, 1e-300)
        res.record(margin, {"case_seed": case_seed, "dim": dim, "tur_residual": rep.tur_residual, "scale": rep.tur_scale})
    return res


def suite_saturation(seed: int, count: int = 1) -> SuiteResult:
    """The proportional-flow qubit attains the TUR bound within 1e-6 of its scale."""
    res = SuiteResult("saturation")
    rep = thermo.evaluate(saturating_qubit())
    margin = (1e-6 * rep.tur_scale - abs(rep.tur_residual)) / rep.tur_scale
    res.record(margin, {"tur_residual": rep.tur_residual, "scale": rep.tur_scale})
    return res


def _theta_quadrature(L: Lindbladian, a):
    """Truncated ``int_0^Theta exp(theta L*)(a) dtheta`` by adaptive quadrature."""
    gap = spectral_gap(L)
    cutoff = 40.0 / gap  # tail below exp(-40)
    f = lambda th: heisenberg_propagate(L, a, th).matrix.ravel()  # noqa: E731
    re, _ = integrate.quad_vec(lambda th: f(th).real, 0.0, cutoff, epsabs=1e-13, epsrel=1e-11, limit=2000)
    im, _ = integrate.quad_vec(lambda th: f(th).imag, 0.0, cutoff, epsabs=1e-13, epsrel=1e-11, limit=2000)
    return (re + 1j * im).reshape(a.shape)


def suite_theta(seed: int, count: int = 50) -> SuiteResult:
    """Bordered-solve theta-integral against direct quadrature of the propagator."""
    res = SuiteResult("theta")
    for k, case_seed, rng in _case_rngs(seed, count):
        dim = (2, 3, 4)[k % 3]
        L = random_generator(rng, dim)
        a = delta_centered(L.stationary, random_hermitian(rng, dim)).matrix
        solved = theta_integral(L, a).matrix
        quad = _theta_quadrature(L, a)
        rel = float(np.linalg.norm(solved - quad) / np.linalg.norm(solved))
        res.record((1e-7 - rel) / 1e-7, {"case_seed": case_seed, "dim": dim, "relative_error": rel})
    return res


def suite_detailed_balance(seed: int, count: int = 50, inject_violation: bool = False) -> SuiteResult:
    """Builders produce generators whose s-dual matches within 1e-9.

    With ``inject_violation`` one extra case is a qubit with a jump operator
    that is not an eigenbasis transition, which must be flagged.
    """
    res = SuiteResult("detailed-balance")
    for k, case_seed, rng in _case_rngs(seed, count):
        if k % 2:
            dim = (2, 3, 4)[k % 3]
            L = random_generator(rng, dim)
            inputs = {"case_seed": case_seed, "builder": "detailed-balanced", "dim": dim}
        else:
            omega, T, G = float(rng.uniform(0.5, 2)), float(rng.uniform(0.1, 5)), float(rng.uniform(0.05, 2))
            L = build_oscillator(omega, T, G, dim=12, tail_tol=None)
            inputs = {"case_seed": case_seed, "builder": "oscillator", "omega": omega, "T": T, "Gamma": G}
        r = detailed_balance_residual(L)
        inputs["residual"] = r
        res.record((1e-9 - r) / 1e-9, inputs)
    if inject_violation:
        L = violating_generator()
        r = detailed_balance_residual(L)
        res.record((1e-9 - r) / 1e-9, {"builder": "injected-violation", "residual": r})
    return res


def violating_generator() -> Lindbladian:
    """Qubit with thermal rates on a jump tilted away from the energy eigenbasis."""
    H = np.diag([0.0, 1.0]).astype(complex)
    theta = 0.6
    u = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    down = u @ np.array([[0, 1], [0, 0]], dtype=complex) @ u.T
    beta = 1.0
    return Lindbladian(H, [(down, math.exp(beta)), (down.conj().T, 1.0)], beta=beta)


def suite_oracle(seed: int, count: int = 2) -> SuiteResult:
    """Closed-form oscillator against the matrix pipeline on the reference grid."""
    res = SuiteResult("oracle")
    grid = [(G, Tc) for G in (0.2, 1.0, 5.0) for Tc in (0.15, 0.3, 0.6, 1.0)]
    for G, Tc in grid[: max(1, min(count, len(grid)))]:
        p = oscillator.OscillatorParams(Gamma=G, T_c=Tc)
        a = oscillator.evaluate(p).scalars()
        m = oscillator.evaluate_matrix(p).scalars()
        worst = min((1e-5 * abs(a[k]) - abs(a[k] - m[k])) / max(abs(a[k]), 1e-300) for k in a)
        res.record(worst / 1e-5, {"Gamma": G, "T_c": Tc})
    return res


SUITES = {
    "inner-product": suite_inner_product,
    "ordering": suite_ordering,
    "tur": suite_tur,
    "saturation": suite_saturation,
    "theta": suite_theta,
    "detailed-balance": suite_detailed_balance,
    "oracle": suite_oracle,
}


def run_suite(name: str, seed: int, count: int | None = None, **kw) -> SuiteResult:
    fn = SUITES[name]
    if count is not None:
        kw["count"] = count
    return fn(seed, **kw)
