"""Detailed-balanced GKLS generators in the Heisenberg picture.

Vectorization is column stacking throughout: ``vec(X)[i + j*d] = X[i, j]``,
so ``vec(A X B) = (B.T kron A) vec(X)``. The Heisenberg generator ``L*`` is
stored as a sparse ``d^2 x d^2`` matrix; the Schrödinger generator is its
conjugate transpose.

Linear algebra is done on the connected blocks of that matrix. For a
time-translation covariant generator these are (subsets of) Bohr-frequency
sectors, which keeps the damped oscillator at ``d ~ 100`` cheap.
"""

from __future__ import annotations

import math
import threading
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.csgraph
import scipy.sparse.linalg

from .errors import (
    ConditioningError,
    DomainError,
    NonUniqueSteadyStateError,
    PreconditionError,
    TruncationError,
    ValidationError,
)
from .opalg import GibbsState, HermitianOperator, _as_matrix, _as_operator, gibbs_state

__all__ = [
    "vec",
    "unvec",
    "Lindbladian",
    "JumpSpec",
    "build_oscillator",
    "oscillator_power_operator",
    "build_detailed_balanced",
    "detailed_balance_residual",
    "covariance_residual",
    "heisenberg_propagate",
    "theta_integral",
    "theta_integrals",
    "first_order_state",
    "spectral_gap",
    "bose_einstein",
]

# blocks up to this size are solved densely
_DENSE_BLOCK = 400
# generators up to this dimension are assembled densely
_DENSE_BUILD = 12
# relative residual accepted from the block solves
_SOLVE_RTOL = 1e-8
# decay rates below this are treated as a vanishing spectral gap
_MIN_GAP = 1e-12


def vec(x: np.ndarray) -> np.ndarray:
    return np.asarray(x).reshape(-1, order="F")


def unvec(v: np.ndarray, d: int) -> np.ndarray:
    return np.asarray(v).reshape(d, d, order="F")


def bose_einstein(beta_omega):
    """``1 / (exp(beta*omega) - 1)`` as ``x / (1 - x)``, ``x = exp(-beta*omega)``, via ``expm1``."""
    y = np.asarray(beta_omega, dtype=float)
    return np.exp(-y) / -np.expm1(-y)


class _Once:
    """Per-instance lazily computed attribute with single initialization."""

    def __init__(self, fn):
        self.fn = fn
        self.name = "_once_" + fn.__name__
        self.__doc__ = fn.__doc__

    def __get__(self, obj, owner=None):
        if obj is None:
            return self
        try:
            return obj.__dict__[self.name]
        except KeyError:
            pass
        with obj._lock:
            if self.name not in obj.__dict__:
                obj.__dict__[self.name] = self.fn(obj)
        return obj.__dict__[self.name]


class Lindbladian:
    """GKLS generator ``L*(X) = i[H, X] + sum_k g_k (J_k^† X J_k - {J_k^† J_k, X}/2)``.

    Parameters
    ----------
    hamiltonian : HermitianOperator or array_like
    jumps : sequence of (operator, rate)
        Jump operators as ``d x d`` arrays (dense or scipy.sparse) with
        non-negative rates.
    beta : float, optional
        Inverse temperature of the nominal Gibbs stationary state.
    stationary : GibbsState, optional
        Overrides the state built from ``hamiltonian`` and ``beta``.
    """

    def __init__(self, hamiltonian, jumps: Sequence = (), beta=None, stationary=None):
        self.hamiltonian = _as_operator(hamiltonian)
        d = self.hamiltonian.dim
        checked = []
        for op, rate in jumps:
            rate = float(rate)
            if not np.isfinite(rate) or rate < 0.0:
                raise DomainError(f"jump rates must be finite and non-negative, got {rate}")
            m = sp.csr_matrix(op, dtype=complex)
            if m.shape != (d, d):
                raise ValidationError(f"jump operator shape {m.shape} does not match dimension {d}")
            checked.append((m, rate))
        self.jumps = tuple(checked)
        self.beta = None if beta is None else float(beta)
        self._stationary = stationary
        self._lock = threading.RLock()

    @property
    def dim(self) -> int:
        return self.hamiltonian.dim

    @_Once
    def stationary(self) -> GibbsState:
        """Nominal Gibbs stationary state (not verified; see ``stationarity_residual``)."""
        if self._stationary is not None:
            return self._stationary
        if self.beta is None:
            raise PreconditionError("no inverse temperature given; stationary state unknown")
        return gibbs_state(self.hamiltonian, self.beta, require_faithful=False)

    @_Once
    def hamiltonian_part(self) -> sp.csr_matrix:
        """Vectorized ``X -> i[H, X]``."""
        d = self.dim
        eye = sp.identity(d, dtype=complex, format="csr")
        h = sp.csr_matrix(self.hamiltonian.matrix)
        out = 1j * (sp.kron(eye, h, format="csr") - sp.kron(h.T, eye, format="csr"))
        out.eliminate_zeros()
        return out.tocsr()

    @_Once
    def vectorized(self) -> sp.csr_matrix:
        """Vectorized Heisenberg generator ``L*`` (column stacking)."""
        d = self.dim
        if d <= _DENSE_BUILD:
            return self._vectorized_dense()
        eye = sp.identity(d, dtype=complex, format="csr")
        h = sp.csr_matrix(self.hamiltonian.matrix)
        # i[H, X] - {K, X}/2 = A X + X A^dagger with A = iH - K/2, K = sum g J^dagger J
        k = sp.csr_matrix((d, d), dtype=complex)
        jump_terms = []
        for j, rate in self.jumps:
            if rate == 0.0:
                continue
            jd = j.conj().T.tocsr()
            k = k + rate * (jd @ j)
            jump_terms.append(rate * sp.kron(j.T, jd, format="csr"))
        a = (1j * h - 0.5 * k).tocsr()
        out = sp.kron(eye, a, format="csr") + sp.kron(a.conj(), eye, format="csr")
        for term in jump_terms:
            out = out + term
        out = sp.csr_matrix(out)
        out.eliminate_zeros()
        return out

    def _vectorized_dense(self) -> sp.csr_matrix:
        d = self.dim
        eye = np.eye(d)
        k = np.zeros((d, d), dtype=complex)
        out = np.zeros((d * d, d * d), dtype=complex)
        for j, rate in self.jumps:
            if rate == 0.0:
                continue
            jm = j.toarray()
            jd = jm.conj().T
            k += rate * (jd @ jm)
            out += rate * np.kron(jm.T, jd)
        a = 1j * self.hamiltonian.matrix - 0.5 * k
        out += np.kron(eye, a) + np.kron(a.conj(), eye)
        return sp.csr_matrix(out)

    @_Once
    def schrodinger(self) -> sp.csr_matrix:
        """Vectorized Schrödinger generator, ``vectorized`` conjugate-transposed."""
        return self.vectorized.conj().T.tocsr()

    @_Once
    def blocks(self):
        """Connected blocks of the vectorized generator.

        Returns ``(labels, kernel_label)`` where ``labels[k]`` is the block of
        ``vec`` index ``k`` and ``kernel_label`` the block holding all
        diagonal (population) entries, where the stationary kernel lives.
        """
        pattern = abs(self.vectorized)
        pattern.eliminate_zeros()
        n, labels = scipy.sparse.csgraph.connected_components(
            pattern, directed=True, connection="weak"
        )
        d = self.dim
        diag_labels = set(labels[np.arange(d) * (d + 1)].tolist())
        if len(diag_labels) != 1:
            raise NonUniqueSteadyStateError(
                f"populations split over {len(diag_labels)} disconnected blocks"
            )
        return labels, diag_labels.pop()

    def block_indices(self):
        return self._block_indices

    @_Once
    def _block_indices(self):
        labels, _ = self.blocks
        order = np.argsort(labels, kind="stable")
        cuts = np.flatnonzero(np.diff(labels[order])) + 1
        return {int(labels[g[0]]): g for g in np.split(order, cuts)}

    def apply(self, A) -> np.ndarray:
        """``L*(A)`` as a dense matrix."""
        a = _as_matrix(A)
        return unvec(self.vectorized @ vec(a), self.dim)

    def apply_schrodinger(self, rho) -> np.ndarray:
        r = _as_matrix(rho)
        return unvec(self.schrodinger @ vec(r), self.dim)

    @_Once
    def spectrum(self) -> np.ndarray:
        """Eigenvalues of the vectorized generator, gathered block by block."""
        out = []
        for idx in self.block_indices().values():
            block = self.vectorized[idx][:, idx].toarray()
            out.append(scipy.linalg.eigvals(block))
        return np.concatenate(out)

    def stationarity_residual(self) -> float:
        """Frobenius norm of ``L(pi)`` for the nominal stationary state."""
        return float(np.linalg.norm(self.apply_schrodinger(self.stationary.pi)))

    def trace_preservation_residual(self) -> float:
        """Frobenius norm of ``L*(I)``."""
        return float(np.linalg.norm(self.apply(np.eye(self.dim))))

    def scaled(self, factor: float) -> "Lindbladian":
        """Same Hamiltonian, every rate multiplied by ``factor``."""
        return Lindbladian(
            self.hamiltonian,
            [(j, r * factor) for j, r in self.jumps],
            beta=self.beta,
            stationary=self._stationary,
        )


@dataclass(frozen=True)
class JumpSpec:
    """Transition pair between eigenlevels ``lower < upper`` (ascending energy).

    ``rate`` is the upward (absorption) rate; the downward rate is fixed by
    the thermal ratio ``exp(beta * (E_upper - E_lower))``.
    """

    lower: int
    upper: int
    rate: float


def build_oscillator(omega, T, Gamma, dim=30, *, tail_tol=1e-12) -> Lindbladian:
    """Damped harmonic oscillator truncated to ``dim`` Fock levels.

    ``H = omega (a^† a + 1/2)``; jumps ``a`` at rate ``Gamma (N + 1)`` and
    ``a^†`` at rate ``Gamma N`` with ``N`` the Bose-Einstein occupation.

    The truncation is refused when the Gibbs weight beyond the last level,
    ``exp(-beta omega dim)``, is at least ``tail_tol``; pass ``tail_tol=None``
    to skip the check.
    """
    omega, T, Gamma = float(omega), float(T), float(Gamma)
    for name, val in (("omega", omega), ("T", T), ("Gamma", Gamma)):
        if not np.isfinite(val) or val <= 0.0:
            raise DomainError(f"{name} must be finite and positive, got {val}")
    dim = int(dim)
    if dim < 2:
        raise DomainError("dim must be at least 2")
    beta = 1.0 / T
    bw = beta * omega
    if tail_tol is not None:
        log_tail = -bw * dim
        if log_tail >= math.log(tail_tol):
            need = math.ceil(-math.log(tail_tol) / bw) + 1
            raise TruncationError(
                f"Gibbs tail exp(-beta*omega*dim) = {math.exp(log_tail):.3e} >= {tail_tol:g}; "
                f"use dim >= {need}",
                suggested_dim=need,
            )
    n_occ = float(bose_einstein(bw))
    n = np.arange(dim)
    H = HermitianOperator._trusted(np.diag(omega * (n + 0.5)).astype(complex))
    a = sp.diags(np.sqrt(np.arange(1, dim)), 1, format="csr", dtype=complex)
    jumps = [(a, Gamma * (n_occ + 1.0)), (a.T.tocsr(), Gamma * n_occ)]
    return Lindbladian(H, jumps, beta=beta)


def oscillator_power_operator(omega_dot: float, dim: int) -> HermitianOperator:
    """``d/dt H`` for a frequency-modulated oscillator, in the instantaneous Fock basis.

    ``omega_dot * (a^† a + 1/2 + (a^2 + a^†2)/2)``; the squeezing terms come
    from the frequency dependence of the ladder operators themselves.
    """
    n = np.arange(dim)
    a = np.diag(np.sqrt(np.arange(1, dim)), 1)
    a2 = a @ a
    m = np.diag(n + 0.5) + 0.5 * (a2 + a2.T)
    return HermitianOperator._trusted(omega_dot * m.astype(complex))


def _connected(levels: int, pairs) -> bool:
    parent = list(range(levels))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in pairs:
        parent[find(i)] = find(j)
    return len({find(i) for i in range(levels)}) == 1


def build_detailed_balanced(H, beta, specs: Sequence[JumpSpec], *, degeneracy_tol=1e-9) -> Lindbladian:
    """Generator with eigenbasis transition jumps obeying the thermal ratio.

    Each spec contributes ``|lower><upper|`` at ``rate * exp(beta w)`` and
    ``|upper><lower|`` at ``rate``, ``w = E_upper - E_lower``.
    """
    H = _as_operator(H)
    beta = float(beta)
    if not np.isfinite(beta) or beta <= 0.0:
        raise DomainError(f"beta must be finite and positive, got {beta}")
    energies, basis = H.eigh()
    d = H.dim
    scale = max(1.0, float(np.max(np.abs(energies))))
    if d > 1 and np.min(np.diff(energies)) < degeneracy_tol * scale:
        raise ValidationError("degenerate Hamiltonian spectrum is not supported")
    pairs = []
    jumps = []
    for s in specs:
        lo, up = int(s.lower), int(s.upper)
        if not (0 <= lo < up < d):
            raise ValidationError(f"invalid transition {lo}->{up} for dimension {d}")
        if s.rate < 0:
            raise DomainError("rates must be non-negative")
        w = energies[up] - energies[lo]
        down = np.outer(basis[:, lo], basis[:, up].conj())
        jumps.append((down, s.rate * math.exp(beta * w)))
        jumps.append((down.conj().T, s.rate))
        if s.rate > 0:
            pairs.append((lo, up))
    if not _connected(d, pairs):
        raise NonUniqueSteadyStateError("transition graph is disconnected; steady state not unique")
    return Lindbladian(H, jumps, beta=beta)


def _eigenbasis_superop(L: Lindbladian, m: sp.spmatrix) -> sp.spmatrix:
    # X' = U^† X U  =>  superop' = (U^T kron U^†) m (conj(U) kron U)
    st = L.stationary
    if st.identity_basis:
        return m
    u = st.basis
    fwd = np.kron(u.T, u.conj().T)
    back = np.kron(u.conj(), u)
    return sp.csr_matrix(fwd @ m.toarray() @ back)


def detailed_balance_residual(L: Lindbladian, s: float = 0.5) -> float:
    """Relative distance between the ``s``-dual of ``L*`` and ``L* - 2 ℋ``.

    The ``s``-dual ``L~`` solves ``tr(pi^(1-s) L~(A) pi^s B) = tr(pi^(1-s) A pi^s L*(B))``.
    In the eigenbasis of ``pi``, with ``Ω(X) = pi^s X pi^(1-s)`` diagonal and
    ``P`` the transpose permutation, this gives ``L~ = P Ω^-1 L*^T Ω P``.
    """
    if not 0.0 <= s <= 1.0:
        raise DomainError("s must lie in [0, 1]")
    st = L.stationary
    if not st.faithful:
        raise PreconditionError("detailed balance needs a faithful stationary state")
    d = L.dim
    lstar = _eigenbasis_superop(L, L.vectorized)
    ham = _eigenbasis_superop(L, L.hamiltonian_part)
    lp = st.log_populations
    i, j = np.meshgrid(np.arange(d), np.arange(d), indexing="ij")
    # vec index i + j*d  <->  entry (i, j)
    log_omega = vec(s * lp[i] + (1.0 - s) * lp[j])
    om = sp.diags(np.exp(log_omega - log_omega.max()))
    om_inv = sp.diags(np.exp(log_omega.max() - log_omega))
    perm = vec(j + i * d)
    P = sp.csr_matrix((np.ones(d * d), (np.arange(d * d), perm)), shape=(d * d, d * d))
    dual = P @ om_inv @ lstar.T @ om @ P
    diff = dual - (lstar - 2.0 * ham)
    denom = sp.linalg.norm(lstar)
    if denom == 0.0:
        return 0.0
    return float(sp.linalg.norm(diff) / denom)


def covariance_residual(L: Lindbladian) -> float:
    """``||ℋ∘L* - L*∘ℋ||_F / ||L*||_F`` (time-translation covariance)."""
    m = L.vectorized
    h = L.hamiltonian_part
    denom = sp.linalg.norm(m)
    if denom == 0.0:
        return 0.0
    return float(sp.linalg.norm(h @ m - m @ h) / denom)


def heisenberg_propagate(L: Lindbladian, A, theta: float) -> HermitianOperator:
    """``exp(theta L*)(A)``, block by block."""
    theta = float(theta)
    if not np.isfinite(theta):
        raise DomainError("theta must be finite")
    a = vec(_as_matrix(A))
    if theta == 0.0:
        return HermitianOperator._trusted(unvec(a, L.dim))
    out = np.zeros_like(a)
    m = L.vectorized
    for idx in _touched_blocks(L, a[:, None]):
        block = m[idx][:, idx]
        if len(idx) <= _DENSE_BLOCK:
            out[idx] = scipy.linalg.expm(theta * block.toarray()) @ a[idx]
        else:
            out[idx] = scipy.sparse.linalg.expm_multiply(theta * block.tocsc(), a[idx])
    return HermitianOperator._trusted(unvec(out, L.dim))


def _touched(L: Lindbladian, cols: np.ndarray):
    """``(label, indices)`` of the blocks where ``cols`` has support."""
    labels, _ = L.blocks
    support = np.any(cols != 0, axis=1)
    groups = L.block_indices()
    return [(int(lab), groups[int(lab)]) for lab in np.unique(labels[support])]


def _touched_blocks(L: Lindbladian, cols: np.ndarray):
    return [idx for _, idx in _touched(L, cols)]


def _centering_tol(a: np.ndarray) -> float:
    return 1e-10 * max(1.0, float(np.max(np.abs(a))) if a.size else 0.0)


def theta_integrals(L: Lindbladian, ops: Sequence, *, method: str = "solve", check_centered: bool = True):
    """``int_0^inf exp(theta L*)(A) dtheta`` for several centered ``A`` at once.

    The integral is the negated Drazin inverse of ``L*`` applied to ``A``.
    With ``method="solve"`` each touched block is solved directly; the block
    holding the stationary kernel uses the bordered system
    ``[[L*, vec(I)], [vec(pi^T)^T, 0]]``, which is non-singular when the kernel
    is simple and pins ``tr(pi R) = 0``. ``method="spectral"`` instead
    eigendecomposes each block and inverts every eigenvalue above
    ``1e-6`` times the block's decay gap.
    """
    d = L.dim
    st = L.stationary
    mats = [_as_matrix(x) for x in ops]
    if not mats:
        return []
    cols = np.stack([vec(x) for x in mats], axis=1)
    if check_centered:
        for x in mats:
            mean = st.expect(x)
            if abs(mean) > _centering_tol(x):
                raise PreconditionError(
                    f"operator is not centered: tr(pi A) = {mean:.3e}; the theta-integral diverges"
                )
    labels, kernel_label = L.blocks
    out = np.zeros_like(cols)
    m = L.vectorized
    for lab, idx in _touched(L, cols):
        rhs = -cols[idx]
        has_kernel = lab == kernel_label
        if method == "solve":
            # border pins tr(pi R) = 0 on the block holding the stationary kernel
            border = (vec(np.eye(d))[idx], vec(st.pi.matrix.T)[idx]) if has_kernel else None
            out[idx] = _solve_block(_extract(m, idx), rhs, border)
        elif method == "spectral":
            out[idx] = _spectral_block(m[idx][:, idx].toarray(), rhs, has_kernel)
        else:
            raise ValueError(f"unknown method {method!r}")
    resid = m @ out + cols
    scale = np.linalg.norm(cols, axis=0)
    bad = np.linalg.norm(resid, axis=0) > _SOLVE_RTOL * np.maximum(scale, 1e-300)
    if np.any(bad & (scale > 0)):
        raise ConditioningError(
            "theta-integral solve failed its residual check; the spectral gap is too small"
        )
    # ||R|| / ||A|| is at least 1/gap along the slowest excited mode
    if np.any(np.linalg.norm(out, axis=0) * _MIN_GAP > scale):
        raise ConditioningError(f"theta-integral amplifies its input beyond 1/{_MIN_GAP:g}; spectral gap too small")
    return [HermitianOperator._trusted(unvec(out[:, k], d)) for k in range(cols.shape[1])]


def theta_integral(L: Lindbladian, dA, *, method: str = "solve") -> HermitianOperator:
    """``int_0^inf exp(theta L*)(dA) dtheta`` for a centered operator ``dA``."""
    return theta_integrals(L, [dA], method=method)[0]


def _extract(m: sp.csr_matrix, idx: np.ndarray):
    """Square sub-block ``m[idx, idx]``: dense when small, CSC otherwise."""
    sub = m[idx][:, idx]
    return sub.toarray() if len(idx) <= _DENSE_BLOCK else sub.tocsc()


def _solve_block(block, rhs, border=None):
    """Solve ``block x = rhs``, optionally bordered by ``(column, row)``.

    The bordered system ``[[block, column], [row, 0]]`` is non-singular when
    ``block`` has a simple kernel not orthogonal to ``row`` and ``column``
    lies outside its range; only the first ``n`` unknowns are returned.
    """
    n = block.shape[0]
    dense = isinstance(block, np.ndarray)
    if border is not None:
        col, row = border
        if dense:
            block = np.block([[block, col[:, None]], [row[None, :], np.zeros((1, 1))]])
        else:
            block = sp.bmat([[block, sp.csc_matrix(col[:, None])], [sp.csc_matrix(row[None, :]), None]], format="csc")
        rhs = np.vstack([rhs, np.zeros((1, rhs.shape[1]))])
    try:
        if dense:
            x = scipy.linalg.solve(block, rhs, check_finite=True)
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("error", scipy.sparse.linalg.MatrixRankWarning)
                x = scipy.sparse.linalg.splu(block).solve(rhs)
    except (np.linalg.LinAlgError, ValueError, RuntimeError, scipy.sparse.linalg.MatrixRankWarning) as exc:
        raise ConditioningError(f"singular generator block: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise ConditioningError("non-finite solution of a generator block")
    return x[:n]


def _spectral_block(block, rhs, has_kernel):
    lam, vecs = scipy.linalg.eig(block)
    mags = np.abs(lam)
    if has_kernel:
        k = int(np.argmin(mags))
        rest = np.delete(np.abs(lam.real), k)
    else:
        k = None
        rest = np.abs(lam.real)
    gap = float(np.min(rest)) if rest.size else 0.0
    if gap < 1e-12:
        raise ConditioningError(f"spectral gap {gap:.3e} is too small")
    inv = np.where(mags > gap * 1e-6, 1.0 / np.where(mags == 0, 1.0, lam), 0.0)
    if k is not None:
        inv[k] = 0.0
    coeff = np.linalg.solve(vecs, rhs)
    # R = -L^D(A) and rhs = -A, so R = V diag(1/lam) V^-1 rhs
    return vecs @ (inv[:, None] * coeff)


def first_order_state(L: Lindbladian, rho_dot) -> HermitianOperator:
    """Traceless ``d rho`` with ``L(d rho) = rho_dot`` (Schrödinger picture).

    ``rho_dot`` must be traceless. This is the first-order lag of the state
    behind the instantaneous stationary state in a slowly driven cycle.
    """
    d = L.dim
    r = vec(_as_matrix(rho_dot))
    if abs(np.sum(r[np.arange(d) * (d + 1)])) > _centering_tol(r):
        raise PreconditionError("rho_dot must be traceless")
    st = L.stationary
    labels, kernel_label = L.blocks
    m = L.schrodinger
    out = np.zeros_like(r)
    for lab, idx in _touched(L, r[:, None]):
        # border pins tr(d rho) = 0 on the block holding the stationary kernel
        border = (vec(st.pi.matrix)[idx], vec(np.eye(d))[idx]) if lab == kernel_label else None
        out[idx] = _solve_block(_extract(m, idx), r[idx][:, None], border)[:, 0]
    return HermitianOperator._trusted(unvec(out, d))


def spectral_gap(L: Lindbladian, *, kernel_tol: float = 1e-9) -> float:
    """Smallest decay rate ``|Re lambda|`` over the non-stationary modes.

    Raises :class:`NonUniqueSteadyStateError` if more than one eigenvalue
    sits within ``kernel_tol`` (scaled by the generator norm) of zero, and
    :class:`ConditioningError` if the gap is below 1e-12.
    """
    lam = L.spectrum
    scale = max(1.0, float(sp.linalg.norm(L.vectorized, ord=1)))
    near = np.abs(lam) < kernel_tol * scale
    if np.count_nonzero(near) > 1:
        raise NonUniqueSteadyStateError(f"{np.count_nonzero(near)} eigenvalues at zero")
    if np.count_nonzero(near) == 0:
        near[np.argmin(np.abs(lam))] = True
    rest = np.abs(lam[~near].real)
    gap = float(np.min(rest)) if rest.size else math.inf
    if gap < _MIN_GAP:
        raise ConditioningError(f"spectral gap {gap:.3e} is below {_MIN_GAP:g}")
    return gap
