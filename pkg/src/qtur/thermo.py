"""Slow-driving thermodynamics of a periodically driven open system.

A cycle is a closed curve ``t -> (T(t), Lambda(t))`` on ``[0, tau]``. At each
time the system is described by a :class:`Snapshot` (Hamiltonian, its time
derivative, the instantaneous generator and the bath data); every
thermodynamic functional is a cycle average of traces built from those
snapshots and the theta-integrals ``R_X = int_0^inf exp(theta L*)(X)``.

Sign conventions: ``P_w > 0`` means work is extracted (engine), ``J_q > 0``
means heat flows into the working medium, ``k_B = hbar = 1``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConvergenceError, DomainError, PreconditionError
from .lindblad import (
    JumpSpec,
    Lindbladian,
    build_detailed_balanced,
    first_order_state,
    theta_integrals,
)
from .opalg import (
    GibbsState,
    HermitianOperator,
    _as_matrix,
    delta_centered,
    gibbs_state,
    log_mean_apply,
    quadratic_form,
    skew_covariance,
)

__all__ = [
    "Protocol",
    "temperature_profile",
    "Snapshot",
    "DrivenSystem",
    "ParametricSystem",
    "LinearDrive",
    "DetailedBalancedFamily",
    "OperatorCurve",
    "EngineReport",
    "TimeIntegrator",
    "inner_product",
    "inner_product_prime",
    "instantaneous_form",
    "entropy_production_rate",
    "average_power",
    "adiabatic_work",
    "power_fluctuations",
    "heat_flux",
    "relaxation_timescale",
    "assemble_report",
    "expansion_coefficients",
    "evaluate",
    "simpson",
    "random_protocol",
    "fourier_drive",
    "warped_alpha",
]

FD_STEP = 1e-6


def temperature_profile(T_c: float, T_h: float, alpha: Callable[[float], float]) -> Callable:
    """Bath temperature ``T_c T_h / (T_h + (T_c - T_h) alpha(t))``.

    ``alpha`` must map into ``[0, 1]``; ``alpha = 0`` gives ``T_c`` and
    ``alpha = 1`` gives ``T_h``.
    """
    if not (0 < T_c < T_h):
        raise DomainError(f"need 0 < T_c < T_h, got T_c={T_c}, T_h={T_h}")

    def T(t):
        a = np.asarray(alpha(t), dtype=float)
        if np.any(a < -1e-12) or np.any(a > 1 + 1e-12):
            raise DomainError(f"alpha(t) = {a} lies outside [0, 1]")
        out = T_c * T_h / (T_h + (T_c - T_h) * a)
        return float(out) if out.ndim == 0 else out

    return T


def _central_difference(fn, t, h):
    return (np.asarray(fn(t + h), dtype=float) - np.asarray(fn(t - h), dtype=float)) / (2.0 * h)


@dataclass(frozen=True)
class Protocol:
    """Closed driving cycle.

    ``alpha`` weights the bath between cold (0) and hot (1) and must vanish
    at both ends; ``mechanical`` returns the Hamiltonian parameters as a 1-D
    array. Missing derivatives fall back to central differences with step
    ``tau * 1e-6`` and set :attr:`uses_finite_differences`.
    """

    tau: float
    T_c: float
    T_h: float
    alpha: Callable[[float], float]
    mechanical: Callable[[float], np.ndarray]
    alpha_dot: Optional[Callable[[float], float]] = None
    mechanical_dot: Optional[Callable[[float], np.ndarray]] = None

    def __post_init__(self):
        if not (np.isfinite(self.tau) and self.tau > 0):
            raise DomainError(f"tau must be positive, got {self.tau}")
        if not (0 < self.T_c <= self.T_h):
            raise DomainError(f"need 0 < T_c <= T_h, got T_c={self.T_c}, T_h={self.T_h}")

    @property
    def uses_finite_differences(self) -> bool:
        return self.alpha_dot is None or self.mechanical_dot is None

    @property
    def eta_C(self) -> float:
        return 1.0 - self.T_c / self.T_h

    def temperature(self, t):
        return 1.0 / self.beta(t)

    def beta(self, t) -> float:
        a = float(self.alpha(t))
        return (self.T_h + (self.T_c - self.T_h) * a) / (self.T_c * self.T_h)

    def beta_dot(self, t) -> float:
        return (self.T_c - self.T_h) * self.alpha_rate(t) / (self.T_c * self.T_h)

    def alpha_rate(self, t) -> float:
        if self.alpha_dot is not None:
            return float(self.alpha_dot(t))
        return float(_central_difference(self.alpha, t, self.tau * FD_STEP))

    def mechanical_rate(self, t) -> np.ndarray:
        if self.mechanical_dot is not None:
            return np.atleast_1d(np.asarray(self.mechanical_dot(t), dtype=float))
        return np.atleast_1d(_central_difference(self.mechanical, t, self.tau * FD_STEP))

    def validate(self, samples: int = 513) -> None:
        """Check closure, vanishing end-point speed and the range of ``alpha``."""
        tau = self.tau
        lam0 = np.atleast_1d(self.mechanical(0.0))
        lam1 = np.atleast_1d(self.mechanical(tau))
        if np.max(np.abs(lam0 - lam1)) > 1e-10 or abs(self.alpha(0.0)) > 1e-10 or abs(self.alpha(tau)) > 1e-10:
            raise PreconditionError("protocol is not closed or alpha does not vanish at the ends")
        for t in (0.0, tau):
            speed = max(abs(self.alpha_rate(t)), float(np.max(np.abs(self.mechanical_rate(t)))))
            if speed * tau > 1e-8 * max(1.0, float(np.max(np.abs(lam0)))) and speed > 1e-8:
                raise PreconditionError(f"protocol speed does not vanish at t={t} ({speed:.3e})")
        ts = np.linspace(0.0, tau, samples)
        a = np.array([self.alpha(t) for t in ts], dtype=float)
        if np.any(a < -1e-12) or np.any(a > 1 + 1e-12):
            raise PreconditionError("alpha leaves [0, 1]")


@dataclass(frozen=True)
class Snapshot:
    """Instantaneous data at one time, all operators in one common basis."""

    hamiltonian: HermitianOperator
    hamiltonian_dot: HermitianOperator
    generator: Lindbladian
    beta: float
    beta_dot: float
    alpha: float
    alpha_dot: float


class DrivenSystem:
    """A protocol together with a map ``t -> Snapshot``."""

    protocol: Protocol

    def snapshot(self, t: float) -> Snapshot:  # pragma: no cover - interface
        raise NotImplementedError

    @property
    def uses_finite_differences(self) -> bool:
        return self.protocol.uses_finite_differences

    def energy_scale(self, snapshots) -> float:
        return max(float(np.max(np.abs(s.hamiltonian.eigenvalues))) for s in snapshots)


class LinearDrive:
    """``H(Lambda) = H0 + sum_k Lambda_k V_k`` with its exact time derivative."""

    def __init__(self, h0, drives):
        self.h0 = HermitianOperator(h0).matrix
        self.drives = [HermitianOperator(v).matrix for v in drives]

    def __call__(self, lam):
        lam = np.atleast_1d(lam)
        out = self.h0.copy()
        for c, v in zip(lam, self.drives):
            out = out + c * v
        return out

    def derivative(self, lam, lam_dot):
        lam_dot = np.atleast_1d(lam_dot)
        out = np.zeros_like(self.h0)
        for c, v in zip(lam_dot, self.drives):
            out = out + c * v
        return out


class DetailedBalancedFamily:
    """``(H, beta) -> build_detailed_balanced(H, beta, specs)``."""

    def __init__(self, specs):
        self.specs = [s if isinstance(s, JumpSpec) else JumpSpec(*s) for s in specs]

    def __call__(self, H, beta):
        return build_detailed_balanced(H, beta, self.specs)


class ParametricSystem(DrivenSystem):
    """Driven system from a parametric Hamiltonian and a generator family.

    Parameters
    ----------
    protocol : Protocol
    hamiltonian : callable
        ``Lambda -> H`` as a Hermitian matrix in a fixed basis.
    generator : callable
        ``(HermitianOperator H, beta) -> Lindbladian``.
    hamiltonian_dot : callable, optional
        ``(Lambda, Lambda_dot) -> dH/dt``. Without it ``dH/dt`` is a central
        difference of ``H(Lambda(t))`` in time.
    """

    def __init__(self, protocol, hamiltonian, generator, hamiltonian_dot=None):
        self.protocol = protocol
        self.hamiltonian = hamiltonian
        self.generator = generator
        if hamiltonian_dot is None and hasattr(hamiltonian, "derivative"):
            hamiltonian_dot = hamiltonian.derivative
        self.hamiltonian_dot = hamiltonian_dot

    @property
    def uses_finite_differences(self) -> bool:
        return self.protocol.uses_finite_differences or self.hamiltonian_dot is None

    def snapshot(self, t: float) -> Snapshot:
        pr = self.protocol
        lam = np.atleast_1d(pr.mechanical(t))
        H = HermitianOperator(self.hamiltonian(lam))
        if self.hamiltonian_dot is not None:
            hd = self.hamiltonian_dot(lam, pr.mechanical_rate(t))
        else:
            h = pr.tau * FD_STEP
            hd = (np.asarray(self.hamiltonian(pr.mechanical(t + h)))
                  - np.asarray(self.hamiltonian(pr.mechanical(t - h)))) / (2 * h)
        beta = pr.beta(t)
        return Snapshot(
            hamiltonian=H,
            hamiltonian_dot=HermitianOperator(hd),
            generator=self.generator(H, beta),
            beta=beta,
            beta_dot=pr.beta_dot(t),
            alpha=float(pr.alpha(t)),
            alpha_dot=pr.alpha_rate(t),
        )


@dataclass(frozen=True)
class OperatorCurve:
    """Operator-valued function ``t -> A(t)`` along a protocol."""

    protocol: Protocol
    evaluator: Callable[[float], object]

    def __call__(self, t) -> HermitianOperator:
        x = self.evaluator(t)
        return x if isinstance(x, HermitianOperator) else HermitianOperator(x)


# ---------------------------------------------------------------- quadrature


def simpson_weights(n: int, tau: float) -> np.ndarray:
    if n < 3 or n % 2 == 0:
        raise ValueError("composite Simpson needs an odd number of nodes >= 3")
    h = tau / (n - 1)
    w = np.full(n, 2.0)
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    return w * (h / 3.0)


def simpson(values: np.ndarray, tau: float) -> np.ndarray:
    """Composite Simpson rule along axis 0 over ``[0, tau]``."""
    values = np.asarray(values, dtype=float)
    w = simpson_weights(values.shape[0], tau)
    # one product per node, then numpy's pairwise sum: fixed reduction order
    return np.sum(w.reshape((-1,) + (1,) * (values.ndim - 1)) * values, axis=0)


# the relative-change test floors |integral| at this fraction of int |f|
_CANCEL_FLOOR = 1e-3


def _converged(old, new, mass, rtol):
    ref = np.maximum(np.abs(new), _CANCEL_FLOOR * mass)
    return bool(np.all(np.abs(new - old) <= rtol * ref))


def adaptive_simpson(fn, tau, *, nodes=257, rtol=1e-7, max_nodes=4097):
    """Integrate a vector-valued ``fn(t)`` by Simpson with nested doubling.

    Returns ``(integral, nodes, samples)``. Samples are reused between levels.
    Raises :class:`ConvergenceError` past ``max_nodes``.
    """
    t = np.linspace(0.0, tau, nodes)
    vals = np.array([np.atleast_1d(fn(x)) for x in t], dtype=float)
    return _refine(fn, tau, t, vals, rtol, max_nodes)


def _refine(fn, tau, t, vals, rtol, max_nodes):
    est = simpson(vals, tau)
    while True:
        n = 2 * len(t) - 1
        if n > max_nodes:
            raise ConvergenceError(f"time quadrature not converged at {len(t)} nodes")
        tn = np.linspace(0.0, tau, n)
        new = np.empty((n,) + vals.shape[1:])
        new[0::2] = vals
        for k in range(1, n, 2):
            new[k] = np.atleast_1d(fn(tn[k]))
        t, vals = tn, new
        est_new = simpson(vals, tau)
        mass = simpson(np.abs(vals), tau)
        if _converged(est, est_new, mass, rtol):
            return est_new, t, vals
        est = est_new


# ---------------------------------------------------------------- inner products


def instantaneous_form(L: Lindbladian, a, b, mean: str = "log") -> float:
    """Integrand of the slow-driving inner products at one time.

    ``(tr(R_a M(b)) + tr(R_b M(a))) / 2`` with ``M`` the logarithmic
    (``mean="log"``) or arithmetic (``"arith"``) mean of the stationary state.
    """
    st = L.stationary
    ra, rb = theta_integrals(L, [a, b])
    return 0.5 * (quadratic_form(st, ra, b, mean) + quadratic_form(st, rb, a, mean))


def _inner(generators, A: OperatorCurve, B: OperatorCurve, mean, nodes, rtol, max_nodes):
    tau = A.protocol.tau

    def f(t):
        return instantaneous_form(generators(t), A(t), B(t), mean)

    val, _, _ = adaptive_simpson(f, tau, nodes=nodes, rtol=rtol, max_nodes=max_nodes)
    return float(val[0]) / tau


def inner_product(generators, A: OperatorCurve, B: OperatorCurve, *, nodes=257, rtol=1e-7, max_nodes=4097) -> float:
    """Slow-driving inner product with the logarithmic mean.

    ``(1/2tau) int_0^tau [tr(R_A J(B)) + tr(R_B J(A))] dt`` with
    ``R_X = int_0^inf exp(theta L*_t)(X) dtheta``. ``generators`` maps
    ``t`` to the instantaneous :class:`Lindbladian`; both curves must be
    centered against its stationary state.
    """
    return _inner(generators, A, B, "log", nodes, rtol, max_nodes)


def inner_product_prime(generators, A: OperatorCurve, B: OperatorCurve, *, nodes=257, rtol=1e-7, max_nodes=4097) -> float:
    """As :func:`inner_product` with the arithmetic mean ``(pi X + X pi)/2``."""
    return _inner(generators, A, B, "arith", nodes, rtol, max_nodes)


# ---------------------------------------------------------------- reports


@dataclass(frozen=True)
class EngineReport:
    """Scalar outputs of one cycle evaluation.

    ``hd_phi``, ``hd_hd`` and ``hd_hd_prime`` are the inner products
    ``<<dH, dPhi>>``, ``<<dH, dH>>`` and ``<<dH, dH>>'`` of the centered
    power operator ``dH`` and entropy flow ``dPhi``. Undefined quantities
    are NaN.
    """

    T_c: float
    T_h: float
    tau: float
    P_w: float
    P_W: float
    J_q: float
    sigma_dot: float
    DeltaP_w: float
    DeltaI_w: float
    W_ad: float
    w_avg: float
    eta: float
    eta_C: float
    eta_PS: float
    eta_Q: float
    eta_cl: float
    f_value: float
    tur_residual: float
    tur_scale: float
    engine_flag: bool
    operating: bool
    hd_phi: float
    hd_hd: float
    hd_hd_prime: float
    J_q_direct: float = math.nan
    P_w_direct: float = math.nan
    DeltaI_w_skew: float = math.nan
    fd_derivatives: bool = False
    meta: dict = field(default_factory=dict, compare=False)

    SCALARS = (
        "P_w", "P_W", "J_q", "sigma_dot", "DeltaP_w", "DeltaI_w", "W_ad", "w_avg",
        "eta", "eta_C", "eta_PS", "eta_Q", "eta_cl", "f_value", "tur_residual",
    )

    def scalars(self) -> dict:
        return {k: getattr(self, k) for k in self.SCALARS}

    @property
    def ratio_quantum(self) -> float:
        """``2 DeltaI_w / DeltaP_w``: quantum share of the power fluctuations."""
        return 2.0 * self.DeltaI_w / self.DeltaP_w if self.DeltaP_w else math.nan

    @property
    def tur_product(self) -> float:
        """``(DeltaP_w - 2 DeltaI_w) * sigma_dot``, the left side of the TUR."""
        return (self.DeltaP_w - 2.0 * self.DeltaI_w) * self.sigma_dot

    def with_meta(self, **kw) -> "EngineReport":
        return dataclasses.replace(self, meta={**self.meta, **kw})

    def as_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "meta"}
        out["ratio_2dIw_over_dPw"] = self.ratio_quantum
        out.update(self.meta)
        return out


def _div(a, b):
    with np.errstate(divide="ignore", invalid="ignore"):
        return float(np.float64(a) / np.float64(b))


def _efficiency_bound(eta_C, T_c, f, P_w, denom):
    # eta_C / (1 + 2 T_c f P_w / denom); a vanishing denominator gives the limit value
    return _div(eta_C, 1.0 + _div(2.0 * T_c * f * P_w, denom))


def assemble_report(
    *,
    T_c,
    T_h,
    tau,
    W,
    cross,
    sigma_dot,
    DeltaP_w,
    DeltaI_w,
    energy_scale,
    J_q_direct=math.nan,
    P_w_direct=math.nan,
    DeltaI_w_skew=math.nan,
    fd_derivatives=False,
    meta=None,
) -> EngineReport:
    """Efficiencies, bounds and the TUR residual from the cycle integrals.

    ``cross`` is ``<<dH, dPhi>>`` so that ``P_w = -W/tau - cross``. The
    ratio ``|W / <w>|`` is declared undefined (``operating=False``, NaN
    ``f_value`` and ``eta_Q``) once ``|<w>|`` drops below ``1e-14`` times
    ``energy_scale``.
    """
    eta_C = 1.0 - T_c / T_h
    P_W = -W / tau
    P_w = P_W - cross
    w_avg = -P_w * tau
    eta = _div(eta_C * P_w, T_c * sigma_dot + P_w)
    J_q = _div(T_c * sigma_dot + P_w, eta_C)
    eta_PS = _efficiency_bound(eta_C, T_c, 1.0, P_w, DeltaP_w)
    operating = abs(w_avg) >= 1e-14 * energy_scale
    if operating:
        f = (1.0 - abs(W / w_avg)) ** 2
        eta_Q = _efficiency_bound(eta_C, T_c, f, P_w, DeltaP_w - 2.0 * DeltaI_w)
        eta_cl = _efficiency_bound(eta_C, T_c, f, P_w, DeltaP_w)
    else:
        f = eta_Q = eta_cl = math.nan
    # f * P_w^2 = ((|<w>| - |W|) / tau)^2 stays finite when <w> -> 0
    fp2 = ((abs(w_avg) - abs(W)) / tau) ** 2
    reduced = DeltaP_w - 2.0 * DeltaI_w
    return EngineReport(
        T_c=T_c,
        T_h=T_h,
        tau=tau,
        P_w=P_w,
        P_W=P_W,
        J_q=J_q,
        sigma_dot=sigma_dot,
        DeltaP_w=DeltaP_w,
        DeltaI_w=DeltaI_w,
        W_ad=W,
        w_avg=w_avg,
        eta=eta,
        eta_C=eta_C,
        eta_PS=eta_PS,
        eta_Q=eta_Q,
        eta_cl=eta_cl,
        f_value=f,
        tur_residual=reduced * sigma_dot - 2.0 * fp2,
        tur_scale=abs(DeltaP_w * sigma_dot) + 2.0 * fp2,
        engine_flag=bool(P_w >= 0.0),
        operating=operating,
        hd_phi=cross,
        hd_hd=0.5 * DeltaP_w - DeltaI_w,
        hd_hd_prime=0.5 * DeltaP_w,
        J_q_direct=J_q_direct,
        P_w_direct=P_w_direct,
        DeltaI_w_skew=DeltaI_w_skew,
        fd_derivatives=fd_derivatives,
        meta=dict(meta or {}),
    )


# integrand slots produced per time node
_SLOTS = (
    "sigma",       # tr(R_phi J(dphi))
    "cross",       # (tr(R_hd J(dphi)) + tr(R_phi J(dhd))) / 2
    "form_log",    # tr(R_hd J(dhd))
    "form_arith",  # tr(R_hd S(dhd))
    "adwork",      # tr(pi dH/dt)
    "heat_eq",     # tr(pi X), X = alpha_dot H + alpha dH/dt
    "heat_lag",    # tr(d rho X)
    "power_lag",   # tr(d rho dH/dt)
    "skew",        # I(R_hd, dhd)
    "scale",       # ||H||, reduced by max not by quadrature
)
_IDX = {k: i for i, k in enumerate(_SLOTS)}


def node_integrands(snap: Snapshot) -> np.ndarray:
    """All per-time integrands of the cycle functionals at one snapshot."""
    L = snap.generator
    st = L.stationary
    H = snap.hamiltonian
    hd = snap.hamiltonian_dot
    # d/dt (beta H) minus d/dt ln Z, then centered explicitly
    raw = snap.beta_dot * H.matrix + snap.beta * hd.matrix
    phi_dot = raw - st.expect(raw) * np.eye(H.dim)
    dphi = delta_centered(st, phi_dot)
    dh = delta_centered(st, H)
    dhd = delta_centered(st, hd)
    r_h, r_hd = theta_integrals(L, [dh, dhd])
    r_phi = snap.beta_dot * r_h.matrix + snap.beta * r_hd.matrix
    j_phi = log_mean_apply(st, dphi).matrix
    j_hd = log_mean_apply(st, dhd).matrix

    def tr(a, b):
        return float(np.real(np.sum(a.T * b)))

    x = snap.alpha_dot * H.matrix + snap.alpha * hd.matrix
    # first-order lag of the state: L(d rho) = d pi/dt = -J(dphi)
    drho = first_order_state(L, -j_phi).matrix
    out = np.empty(len(_SLOTS))
    out[_IDX["sigma"]] = tr(r_phi, j_phi)
    out[_IDX["cross"]] = 0.5 * (tr(r_hd.matrix, j_phi) + tr(r_phi, j_hd))
    out[_IDX["form_log"]] = tr(r_hd.matrix, j_hd)
    out[_IDX["form_arith"]] = quadratic_form(st, r_hd, dhd, "arith")
    out[_IDX["adwork"]] = st.expect(hd)
    out[_IDX["heat_eq"]] = st.expect(x)
    out[_IDX["heat_lag"]] = tr(drho, x)
    out[_IDX["power_lag"]] = tr(drho, hd.matrix)
    out[_IDX["skew"]] = skew_covariance(st, r_hd, dhd)
    out[_IDX["scale"]] = float(np.max(np.abs(H.eigenvalues)))
    return out


def scalars_close(a: dict, b: dict, rtol: float) -> bool:
    for k, x in a.items():
        y = b[k]
        if math.isnan(x) and math.isnan(y):
            continue
        if not abs(x - y) <= rtol * max(abs(x), abs(y), 1e-300):
            if abs(x - y) > 1e-300:
                return False
    return True


class TimeIntegrator:
    """Samples :func:`node_integrands` on a uniform grid and assembles reports.

    The grid starts at ``nodes`` points; :meth:`refine` doubles it, reusing
    existing samples, until every cycle integral changes by less than
    ``rtol`` relative between successive grids.
    """

    def __init__(self, system: DrivenSystem, nodes: int = 257):
        self.system = system
        self.tau = system.protocol.tau
        self.t = np.linspace(0.0, self.tau, nodes)
        self.values = np.array([self._node(t) for t in self.t])

    def _node(self, t):
        return node_integrands(self.system.snapshot(float(t)))

    def report(self) -> EngineReport:
        return self._assemble(self.values)

    def refine(self, rtol: float = 1e-7, max_nodes: int = 4097) -> EngineReport:
        integ = slice(0, len(_SLOTS) - 1)
        est = simpson(self.values[:, integ], self.tau)
        while True:
            n = 2 * len(self.t) - 1
            if n > max_nodes:
                raise ConvergenceError(f"time quadrature not converged at {len(self.t)} nodes")
            tn = np.linspace(0.0, self.tau, n)
            new = np.empty((n, self.values.shape[1]))
            new[0::2] = self.values
            for k in range(1, n, 2):
                new[k] = self._node(tn[k])
            self.t, self.values = tn, new
            est_new = simpson(new[:, integ], self.tau)
            mass = simpson(np.abs(new[:, integ]), self.tau)
            if _converged(est, est_new, mass, rtol):
                return self.report()
            est = est_new

    def _assemble(self, values) -> EngineReport:
        tau = self.tau
        s = simpson(values[:, : len(_SLOTS) - 1], tau) / tau
        g = dict(zip(_SLOTS, s))
        W = g["adwork"] * tau
        form_log, form_arith = g["form_log"], g["form_arith"]
        rep = assemble_report(
            T_c=self.system.protocol.T_c,
            T_h=self.system.protocol.T_h,
            tau=tau,
            W=W,
            cross=g["cross"],
            sigma_dot=g["sigma"],
            DeltaP_w=2.0 * form_arith,
            DeltaI_w=form_arith - form_log,
            energy_scale=float(np.max(values[:, _IDX["scale"]])),
            J_q_direct=-(g["heat_eq"] + g["heat_lag"]),
            P_w_direct=-(g["adwork"] + g["power_lag"]),
            DeltaI_w_skew=g["skew"],
            fd_derivatives=self.system.uses_finite_differences,
            meta={"nodes": len(self.t)},
        )
        return rep


def evaluate(system: DrivenSystem, *, nodes: int = 257, rtol: float = 1e-7, max_nodes: int = 4097) -> EngineReport:
    """Full :class:`EngineReport` for a driven system at converged time resolution."""
    return TimeIntegrator(system, nodes).refine(rtol=rtol, max_nodes=max_nodes)


def entropy_production_rate(system: DrivenSystem, **kw) -> float:
    """``<<dPhi, dPhi>>``: cycle-averaged non-adiabatic entropy production rate."""
    return evaluate(system, **kw).sigma_dot


def average_power(system: DrivenSystem, **kw) -> float:
    """``-W/tau - <<dH, dPhi>>``; positive when the cycle runs as an engine."""
    return evaluate(system, **kw).P_w


def adiabatic_work(system: DrivenSystem, *, nodes=257, rtol=1e-9, max_nodes=8193) -> float:
    """``int_0^tau tr(dH/dt pi_t) dt`` (work along the equilibrium trajectory)."""

    def f(t):
        snap = system.snapshot(t)
        return snap.generator.stationary.expect(snap.hamiltonian_dot)

    val, _, _ = adaptive_simpson(f, system.protocol.tau, nodes=nodes, rtol=rtol, max_nodes=max_nodes)
    return float(val[0])


def power_fluctuations(system: DrivenSystem, **kw):
    """``(DeltaP_w, DeltaI_w)`` with ``DeltaP_w = 2 <<dH, dH>>'`` and
    ``DeltaI_w = <<dH, dH>>' - <<dH, dH>>``."""
    rep = evaluate(system, **kw)
    return rep.DeltaP_w, rep.DeltaI_w


def heat_flux(system: DrivenSystem, **kw):
    """Heat flux ``J_q`` by two routes: ``(identity, direct)``.

    The first uses ``T_c sigma_dot = eta_C J_q - P_w``; the second integrates
    ``alpha(t) tr(d rho_t/dt H)`` by parts against the first-order state.
    """
    rep = evaluate(system, **kw)
    return rep.J_q, rep.J_q_direct


def relaxation_timescale(L: Lindbladian, Hdot, *, rtol: float = 1e-14) -> Optional[float]:
    """Integral relaxation time of the quantum part of the power correlations.

    ``int_0^inf I(Hdot(theta), Hdot) dtheta / I(Hdot, Hdot)``, evaluated as
    ``I(R, dHdot) / I(Hdot, Hdot)`` with ``R`` the theta-integral of the
    centered ``Hdot``. Returns ``None`` when ``I(Hdot, Hdot)`` is below
    ``rtol * ||Hdot||_F^2`` (no quantum friction).
    """
    st = L.stationary
    hd = Hdot if isinstance(Hdot, HermitianOperator) else HermitianOperator(Hdot)
    denom = skew_covariance(st, hd, hd)
    if denom <= rtol * max(float(np.linalg.norm(hd.matrix)) ** 2, 1e-300):
        return None
    dhd = delta_centered(st, hd)
    (r,) = theta_integrals(L, [dhd])
    return skew_covariance(st, r, dhd) / denom


def expansion_coefficients(report: EngineReport, t_eq: float):
    """First-order coefficients in ``eps = t_eq / tau``.

    Returns ``(a_P, a_DeltaP, eta_firstorder)`` with
    ``a_P = (P_w - P_W)/eps``, ``a_DeltaP = (DeltaP_w - 2 DeltaI_w)/eps`` and
    ``eta_C (1 - eps 2 T_c a_P^2 / (P_W a_DeltaP))``; the last is NaN unless
    ``P_W > 0``.
    """
    eps = t_eq / report.tau
    a_P = (report.P_w - report.P_W) / eps
    a_dP = (report.DeltaP_w - 2.0 * report.DeltaI_w) / eps
    if report.P_W <= 0 or a_dP == 0:
        return a_P, a_dP, math.nan
    eta1 = report.eta_C * (1.0 - eps * 2.0 * report.T_c * a_P * a_P / (report.P_W * a_dP))
    return a_P, a_dP, eta1


# ---------------------------------------------------------------- random cycles


def fourier_drive(cos_coeffs, sin_coeffs, tau: float):
    """Closed parameter curve with vanishing speed at both ends.

    ``Lambda_k(t) = sum_m c_km (1 - cos(m s)) + b_km (sin(m s) - m/(m+1) sin((m+1) s))``
    with ``s = 2 pi t / tau``. Both families vanish at ``t = 0, tau`` together
    with their first derivative. Returns ``(Lambda, Lambda_dot)``.
    """
    c = np.atleast_2d(np.asarray(cos_coeffs, dtype=float))
    b = np.zeros_like(c) if sin_coeffs is None else np.atleast_2d(np.asarray(sin_coeffs, dtype=float))
    if b.shape != c.shape:
        raise ValueError(f"cosine and sine coefficient shapes differ: {c.shape} vs {b.shape}")
    m = np.arange(1, c.shape[1] + 1, dtype=float)
    k = 2.0 * np.pi / tau
    ratio = m / (m + 1.0)

    def lam(t):
        s = k * t
        return c @ (1.0 - np.cos(m * s)) + b @ (np.sin(m * s) - ratio * np.sin((m + 1.0) * s))

    def lam_dot(t):
        s = k * t
        return k * (c @ (m * np.sin(m * s)) + b @ (m * (np.cos(m * s) - np.cos((m + 1.0) * s))))

    return lam, lam_dot


def warped_alpha(tau: float, warp: float = 0.0):
    """``alpha = sin^2(pi u/tau)`` with ``u = t + warp tau sin(2 pi t/tau)/(2 pi)``.

    ``|warp| < 1`` keeps ``u`` monotone, so ``alpha`` stays in ``[0, 1]`` and
    peaks once; its derivative vanishes at both ends. Returns ``(alpha, alpha_dot)``.
    """
    if not abs(warp) < 1.0:
        raise DomainError("warp must lie in (-1, 1)")
    k = 2.0 * math.pi / tau

    def u(t):
        return t + warp * math.sin(k * t) / k

    def alpha(t):
        return math.sin(math.pi * u(t) / tau) ** 2

    def alpha_dot(t):
        return (math.pi / tau) * math.sin(k * u(t)) * (1.0 + warp * math.cos(k * t))

    return alpha, alpha_dot


def random_protocol(rng: np.random.Generator, n_params: int, *, tau=1.0, T_c=0.5, T_h=1.5, modes=2, amplitude=0.3) -> Protocol:
    """Seeded random cycle for property suites.

    The bath weight is a randomly warped ``sin^2`` and each mechanical
    parameter is a :func:`fourier_drive` with ``modes`` random cosine and
    sine coefficients; the result is closed with vanishing end-point speed.
    """
    cos_c = rng.normal(scale=amplitude / modes, size=(n_params, modes))
    sin_c = rng.normal(scale=amplitude / modes, size=(n_params, modes))
    mech, mech_dot = fourier_drive(cos_c, sin_c, tau)
    alpha, alpha_dot = warped_alpha(tau, float(rng.uniform(-0.6, 0.6)))
    return Protocol(
        tau=tau,
        T_c=T_c,
        T_h=T_h,
        alpha=alpha,
        mechanical=mech,
        alpha_dot=alpha_dot,
        mechanical_dot=mech_dot,
    )
