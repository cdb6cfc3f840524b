"""Operator algebra on finite-dimensional Hilbert spaces.

Everything here is evaluated in the eigenbasis of the reference state: the
logarithmic and arithmetic matrix means act entrywise there, with kernels
built from the populations ``p_i``. Fractional powers of the state are never
formed.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatchError,
    DomainError,
    NotFaithfulError,
    ValidationError,
)

__all__ = [
    "HermitianOperator",
    "GibbsState",
    "gibbs_state",
    "log_mean_apply",
    "arith_mean_apply",
    "skew_covariance",
    "delta_centered",
    "log_mean",
    "HERMITIAN_ATOL",
    "FAITHFUL_FLOOR",
]

HERMITIAN_ATOL = 1e-12
FAITHFUL_FLOOR = 1e-300
# below this |ln p_i - ln p_j| the logarithmic mean switches to its series
_LOG_MEAN_SERIES = 1e-8
# below this half log-ratio the skew kernel switches to its series
_SKEW_SERIES = 1e-3


class HermitianOperator:
    """Dense Hermitian matrix with a lazily cached eigendecomposition.

    Small anti-Hermitian noise (entrywise below ``HERMITIAN_ATOL`` times the
    largest entry, floored at one) is removed by symmetrizing; anything
    larger is rejected.
    """

    __slots__ = ("_m", "_eig", "_lock")

    def __init__(self, matrix, *, atol=HERMITIAN_ATOL):
        m = np.array(matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
            raise ValidationError(f"expected a non-empty square matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValidationError("matrix has non-finite entries")
        asym = np.max(np.abs(m - m.conj().T)) if m.size else 0.0
        scale = max(1.0, float(np.max(np.abs(m))))
        if asym > atol * scale:
            raise ValidationError(f"matrix is not Hermitian (max asymmetry {asym:.3e})")
        self._m = 0.5 * (m + m.conj().T)
        self._m.setflags(write=False)
        self._eig = None
        self._lock = threading.Lock()

    @classmethod
    def _trusted(cls, matrix):
        # internal fast path: caller guarantees Hermiticity up to rounding
        self = object.__new__(cls)
        m = np.asarray(matrix, dtype=complex)
        self._m = 0.5 * (m + m.conj().T)
        self._m.setflags(write=False)
        self._eig = None
        self._lock = threading.Lock()
        return self

    @property
    def matrix(self) -> np.ndarray:
        return self._m

    @property
    def dim(self) -> int:
        return self._m.shape[0]

    def eigh(self):
        """Return ``(eigenvalues ascending, eigenvectors as columns)``."""
        if self._eig is None:
            with self._lock:
                if self._eig is None:
                    w, v = np.linalg.eigh(self._m)
                    w.setflags(write=False)
                    v.setflags(write=False)
                    self._eig = (w, v)
        return self._eig

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.eigh()[0]

    def expectation(self, rho) -> float:
        r = rho.matrix if isinstance(rho, HermitianOperator) else np.asarray(rho)
        return float(np.real(np.sum(r.T * self._m)))

    def __add__(self, other):
        return HermitianOperator._trusted(self._m + _as_matrix(other))

    def __sub__(self, other):
        return HermitianOperator._trusted(self._m - _as_matrix(other))

    def __mul__(self, c):
        if np.iscomplexobj(c) and np.imag(c) != 0:
            raise ValidationError("only real scalars preserve Hermiticity")
        return HermitianOperator._trusted(float(np.real(c)) * self._m)

    __rmul__ = __mul__

    def __neg__(self):
        return HermitianOperator._trusted(-self._m)

    def __repr__(self):
        return f"HermitianOperator(dim={self.dim})"


def _as_matrix(x) -> np.ndarray:
    if isinstance(x, HermitianOperator):
        return x.matrix
    return np.asarray(x, dtype=complex)


def _as_operator(x) -> HermitianOperator:
    return x if isinstance(x, HermitianOperator) else HermitianOperator(x)


@dataclass(frozen=True, eq=False)
class GibbsState:
    """Thermal state ``exp(-beta H) / Z`` stored in the eigenbasis of ``H``.

    ``populations`` and ``log_populations`` are ordered like the ascending
    eigenvalues of ``H``; ``basis`` holds the matching eigenvectors.
    """

    pi: HermitianOperator
    beta: float
    log_z: float
    free_energy: float
    populations: np.ndarray
    log_populations: np.ndarray
    basis: np.ndarray
    energies: np.ndarray
    faithful: bool
    _kernels: dict = field(default_factory=dict, repr=False, compare=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    @property
    def dim(self) -> int:
        return self.pi.dim

    @property
    def identity_basis(self) -> bool:
        return bool(self._kernel("identity_basis"))

    def to_eigenbasis(self, a: np.ndarray) -> np.ndarray:
        if self.identity_basis:
            return a
        u = self.basis
        return u.conj().T @ a @ u

    def from_eigenbasis(self, a: np.ndarray) -> np.ndarray:
        if self.identity_basis:
            return a
        u = self.basis
        return u @ a @ u.conj().T

    def kernel(self, name: str) -> np.ndarray:
        """Mean kernel matrix ``m(p_i, p_j)``: ``"log"``, ``"arith"`` or ``"skew"``."""
        if not self.faithful:
            raise NotFaithfulError(
                f"state has eigenvalues below {FAITHFUL_FLOOR:g}; matrix means are undefined"
            )
        return self._kernel(name)

    def _kernel(self, name):
        k = self._kernels.get(name)
        if k is None:
            with self._lock:
                k = self._kernels.get(name)
                if k is None:
                    k = _build_kernel(self, name)
                    self._kernels[name] = k
        return k

    def expect(self, a) -> float:
        return float(np.real(np.sum(self.pi.matrix.T * _as_matrix(a))))


def _build_kernel(state: GibbsState, name: str):
    p = state.populations
    lp = state.log_populations
    if name == "identity_basis":
        return np.array_equal(state.basis, np.eye(state.dim))
    pi_, pj = p[:, None], p[None, :]
    if name == "arith":
        k = 0.5 * (pi_ + pj)
    elif name == "log":
        k = log_mean(pi_, pj, lp[:, None], lp[None, :])
    elif name == "skew":
        k = _skew_kernel(pi_, pj, lp[:, None], lp[None, :])
    else:
        raise KeyError(name)
    k.setflags(write=False)
    return k


def log_mean(x, y, log_x=None, log_y=None):
    """Logarithmic mean ``(x - y) / (ln x - ln y)`` with ``L(x, x) = x``.

    Near the diagonal (log-ratio below 1e-8) a three-term expansion about the
    geometric midpoint is used: ``sqrt(xy) (1 + h^2/6 + h^4/120)``, ``h`` the
    half log-ratio.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    lx = np.log(x) if log_x is None else np.asarray(log_x, dtype=float)
    ly = np.log(y) if log_y is None else np.asarray(log_y, dtype=float)
    if log_x is None or log_y is None:
        # x - y is exact for nearby arguments; subtracting two logs is not
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.log1p((x - y) / y)
    else:
        d = lx - ly
    near = np.abs(d) < _LOG_MEAN_SERIES
    with np.errstate(divide="ignore", invalid="ignore"):
        direct = (x - y) / d
    h = 0.5 * d
    series = np.exp(0.5 * (lx + ly)) * (1.0 + h * h / 6.0 + h**4 / 120.0)
    return np.where(near, series, direct)


def _skew_kernel(x, y, lx, ly):
    # arithmetic minus logarithmic mean; sqrt(xy) (cosh h - sinh(h)/h) near the diagonal
    h = 0.5 * (lx - ly)
    near = np.abs(h) < _SKEW_SERIES
    direct = 0.5 * (x + y) - log_mean(x, y, lx, ly)
    h2 = h * h
    series = np.exp(0.5 * (lx + ly)) * h2 * (1.0 / 3.0 + h2 / 30.0 + h2 * h2 / 840.0)
    return np.where(near, series, direct)


def gibbs_state(H, beta: float, *, require_faithful: bool = True) -> GibbsState:
    """Gibbs state of ``H`` at inverse temperature ``beta``.

    The ground energy is shifted out before exponentiating, so
    ``log_z = -beta * E_min + log(sum exp(-beta (E_i - E_min)))``.

    Parameters
    ----------
    H : HermitianOperator or array_like
    beta : float
        Inverse temperature, finite and positive.
    require_faithful : bool
        Raise :class:`NotFaithfulError` if a population underflows below
        ``FAITHFUL_FLOOR``. With ``False`` such a state is returned but flagged
        ``faithful=False`` and its mean kernels refuse to evaluate.
    """
    H = _as_operator(H)
    beta = float(beta)
    if not np.isfinite(beta) or beta <= 0.0:
        raise DomainError(f"beta must be finite and positive, got {beta!r}")
    energies, basis = H.eigh()
    shifted = -beta * (energies - energies[0])
    log_norm = float(np.log(np.sum(np.exp(shifted))))
    log_p = shifted - log_norm
    p = np.exp(log_p)
    faithful = bool(np.min(p) >= FAITHFUL_FLOOR)
    if require_faithful and not faithful:
        raise NotFaithfulError(
            f"smallest Gibbs population {np.min(p):.3e} is below {FAITHFUL_FLOOR:g}"
        )
    pi = (basis * p) @ basis.conj().T
    log_z = -beta * float(energies[0]) + log_norm
    for arr in (p, log_p):
        arr.setflags(write=False)
    return GibbsState(
        pi=HermitianOperator._trusted(pi),
        beta=beta,
        log_z=log_z,
        free_energy=-log_z / beta,
        populations=p,
        log_populations=log_p,
        basis=basis,
        energies=energies,
        faithful=faithful,
    )


def _check_dims(state: GibbsState, *ops):
    for op in ops:
        if op.shape[0] != state.dim:
            raise DimensionMismatchError(
                f"operator of dimension {op.shape[0]} against state of dimension {state.dim}"
            )


def _mean_apply(state: GibbsState, A, name: str) -> HermitianOperator:
    a = _as_matrix(A)
    _check_dims(state, a)
    k = state.kernel(name)
    return HermitianOperator._trusted(state.from_eigenbasis(state.to_eigenbasis(a) * k))


def log_mean_apply(pi: GibbsState, A) -> HermitianOperator:
    """Logarithmic matrix mean ``int_0^1 pi^s A pi^(1-s) ds``."""
    return _mean_apply(pi, A, "log")


def arith_mean_apply(pi: GibbsState, A) -> HermitianOperator:
    """Arithmetic matrix mean ``(pi A + A pi) / 2``."""
    return _mean_apply(pi, A, "arith")


def skew_covariance(pi: GibbsState, A, B) -> float:
    """Skew covariance ``-1/2 int_0^1 tr([A, pi^s][B, pi^(1-s)]) ds``.

    Equal to ``tr(A S(B)) - tr(A J(B))`` with ``S`` and ``J`` the arithmetic
    and logarithmic means; evaluated with the kernel ``(p_i+p_j)/2 - L(p_i,p_j)``
    so the difference never suffers cancellation between two full traces.
    """
    a = _as_matrix(A)
    b = _as_matrix(B)
    _check_dims(pi, a, b)
    k = pi.kernel("skew")
    ae = pi.to_eigenbasis(a)
    be = pi.to_eigenbasis(b)
    return float(np.sum(np.real(ae.conj() * be) * k))


def delta_centered(pi: GibbsState, A) -> HermitianOperator:
    """``A - tr(pi A) * I``: the fluctuation of ``A`` around its stationary mean."""
    a = _as_matrix(A)
    _check_dims(pi, a)
    mean = pi.expect(a)
    return HermitianOperator._trusted(a - mean * np.eye(pi.dim))


def quadratic_form(pi: GibbsState, A, B, mean: str = "log") -> float:
    """``tr(A M(B))`` for the mean ``M`` named by ``mean`` (``log`` or ``arith``)."""
    a = _as_matrix(A)
    b = _as_matrix(B)
    _check_dims(pi, a, b)
    k = pi.kernel(mean)
    return float(np.sum(np.real(pi.to_eigenbasis(a).conj() * pi.to_eigenbasis(b)) * k))
