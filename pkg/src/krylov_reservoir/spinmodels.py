"""Benchmark systems: the longitudinal-transverse Ising chain and the quantum standard map.

Qubit/site 0 is the most significant bit of a computational basis index, the
same convention as :mod:`krylov_reservoir.circuits`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .matrixcore import (
    LinalgError,
    as_matrix,
    eig_hermitian,
    eigphases_unitary,
    hermitian_defect,
    unitary_defect,
)

__all__ = [
    "IsingParams",
    "ParityBasis",
    "ResourceError",
    "SpectralWindow",
    "StandardMapParams",
    "SymmetryError",
    "build_ising",
    "build_standard_map",
    "eigenstate_bank",
    "parity_basis",
    "project_operator",
    "reflection_permutation",
]

MAX_SITES = 14


class ResourceError(MemoryError):
    """Requested system exceeds the configured dense-matrix budget."""


class SymmetryError(LinalgError):
    pass


@dataclass(frozen=True)
class IsingParams:
    n: int
    hz: float = 0.0
    hx: float = 1.0
    j_coupling: float = 1.0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("Ising chain needs at least 2 sites")


@dataclass(frozen=True)
class StandardMapParams:
    """Quantum standard map on the unit torus.

    ``kick_scale`` multiplies the kick phase ``(k / hbar) cos(2 pi x)``. The
    default ``1 / (4 pi^2)`` gives the classical map ``p' = p + (k / 2 pi)
    sin(2 pi x)``, i.e. Chirikov stochasticity parameter ``K = k``; set it to 1
    for the unnormalized kick ``K = 4 pi^2 k``.

    The default Bloch phases break parity but keep the antiunitary symmetry
    (parity combined with complex conjugation), so chaotic spectra follow COE
    statistics. Two nonzero phases remove that symmetry as well (CUE).
    """

    n_hilbert: int
    k_chaos: float
    bloch_x: float = 0.0
    bloch_p: float = 0.25
    kick_scale: float = 1.0 / (4.0 * math.pi**2)

    def __post_init__(self):
        if self.n_hilbert < 2:
            raise ValueError("Hilbert dimension must be at least 2")
        if not (0.0 <= self.bloch_x < 1.0 and 0.0 <= self.bloch_p < 1.0):
            raise ValueError("Bloch phases must lie in [0, 1)")

    @property
    def hbar(self) -> float:
        return 1.0 / (2.0 * math.pi * self.n_hilbert)


def _check_budget(n: int, max_sites: int | None) -> None:
    limit = MAX_SITES if max_sites is None else max_sites
    if n > limit:
        raise ResourceError(f"n = {n} exceeds the dense budget of {limit} sites (dim {2**limit})")


def _spins(n: int) -> np.ndarray:
    """(2^n, n) array of sigma^z eigenvalues, column k for site k."""
    idx = np.arange(2**n)
    bits = (idx[:, None] >> (n - 1 - np.arange(n))[None, :]) & 1
    return 1 - 2 * bits


def build_ising(p: IsingParams, max_sites: int | None = None, sparse: bool = False):
    """Open-chain Hamiltonian ``sum_k (hx X_k + hz Z_k) - J sum_k Z_k Z_{k+1}``.

    Dense complex by default; ``sparse=True`` returns a CSR matrix with the same
    entries, which is what the larger chains should go through.
    """
    n = p.n
    _check_budget(n, max_sites)
    dim = 2**n
    z = _spins(n)
    diag = p.hz * z.sum(axis=1) - p.j_coupling * (z[:, :-1] * z[:, 1:]).sum(axis=1)
    idx = np.arange(dim)
    if sparse:
        rows = np.concatenate([idx] + [idx ^ (1 << (n - 1 - k)) for k in range(n)])
        cols = np.tile(idx, n + 1)
        vals = np.concatenate([diag.astype(float), np.full(n * dim, float(p.hx))])
        return sp.csr_matrix((vals.astype(complex), (rows, cols)), shape=(dim, dim))
    h = np.diag(diag.astype(complex))
    for k in range(n):
        h[idx ^ (1 << (n - 1 - k)), idx] += p.hx
    return h


def reflection_permutation(n: int) -> np.ndarray:
    """``perm[s]`` is the index of the bit-reversed string of ``s``."""
    idx = np.arange(2**n)
    out = np.zeros_like(idx)
    for k in range(n):
        out |= ((idx >> k) & 1) << (n - 1 - k)
    return out


@dataclass(frozen=True)
class ParityBasis:
    """Isometry onto the +1 eigenspace of the site-reversal operator.

    Columns are ordered by their smallest constituent basis index: palindromes
    map to ``|s>`` and every other pair to ``(|s> + |rev s>) / sqrt 2``.
    """

    n: int
    basis: np.ndarray

    @property
    def dim(self) -> int:
        return self.basis.shape[1]


def parity_basis(n: int) -> ParityBasis:
    if n < 2:
        raise ValueError("parity basis needs n >= 2")
    rev = reflection_permutation(n)
    reps = np.flatnonzero(np.arange(2**n) <= rev)
    basis = np.zeros((2**n, reps.size))
    cols = np.arange(reps.size)
    pal = rev[reps] == reps
    basis[reps[pal], cols[pal]] = 1.0
    basis[reps[~pal], cols[~pal]] = 1.0 / math.sqrt(2.0)
    basis[rev[reps[~pal]], cols[~pal]] = 1.0 / math.sqrt(2.0)
    return ParityBasis(n, basis)


def project_operator(m, basis: ParityBasis, tol: float = 1e-9) -> np.ndarray:
    """Restrict ``m`` to the positive-parity sector: ``B^dagger M B``.

    Raises
    ------
    SymmetryError
        If ``m`` does not commute with the reflection (``max |[M, R]| > tol``).
    """
    rev = reflection_permutation(basis.n)
    if sp.issparse(m):
        m = sp.csr_matrix(m)
        if m.shape != (2**basis.n, 2**basis.n):
            raise LinalgError(f"operator shape {m.shape} does not match 2^{basis.n}")
        diff = (m[rev][:, rev] - m).tocoo()
        violation = float(np.max(np.abs(diff.data))) if diff.nnz else 0.0
    else:
        m = as_matrix(m)
        if m.shape[0] != 2**basis.n:
            raise LinalgError(f"operator dim {m.shape[0]} does not match 2^{basis.n}")
        # (R M R)[i, j] = M[rev i, rev j]; [M, R] = 0 iff R M R = M
        violation = float(np.max(np.abs(m[np.ix_(rev, rev)] - m)))
    if violation > tol:
        raise SymmetryError(f"operator breaks reflection symmetry: max |[M, R]| = {violation:.3e}")
    if sp.issparse(m):
        b = sp.csr_matrix(basis.basis)
        return np.asarray((b.T @ m @ b).toarray())
    b = basis.basis
    return b.T @ m @ b


def build_standard_map(p: StandardMapParams) -> np.ndarray:
    """Floquet operator ``F^dagger exp(-i p^2 / 2 hbar) F exp(-i s (k / hbar) cos 2 pi x)``.

    Position grid ``x_j = (j + bloch_x) / N``; momentum grid
    ``p_m = (m + bloch_p) / N`` with ``m`` in ``[-N/2, N/2)``; ``s`` is
    ``kick_scale``. Matrix is in the position basis.
    """
    n = p.n_hilbert
    hbar = p.hbar
    x = (np.arange(n) + p.bloch_x) / n
    m = np.arange(-(n // 2), n - n // 2) + p.bloch_p
    mom = m / n
    # position -> momentum transform with the Bloch twist on both grids
    f = np.exp(-2j * np.pi * np.outer(m, np.arange(n) + p.bloch_x) / n) / math.sqrt(n)
    kick = np.exp(-1j * p.kick_scale * (p.k_chaos / hbar) * np.cos(2.0 * np.pi * x))
    free = np.exp(-1j * mom**2 / (2.0 * hbar))
    return f.conj().T @ (free[:, None] * (f * kick[None, :]))


@dataclass(frozen=True)
class SpectralWindow:
    """Select eigenvectors whose fractional rank ``(i + 1/2) / d`` lies in
    ``[center - width/2, center + width/2)``, then keep every ``stride``-th one
    so that at most ``count`` remain."""

    center: float = 0.5
    width: float = 0.2
    count: int | None = None

    def indices(self, dim: int) -> np.ndarray:
        frac = (np.arange(dim) + 0.5) / dim
        lo, hi = self.center - self.width / 2, self.center + self.width / 2
        idx = np.flatnonzero((frac >= lo) & (frac < hi))
        if self.count is not None and idx.size > self.count:
            stride = math.ceil(idx.size / self.count)
            idx = idx[::stride]
        return idx


def eigenstate_bank(h_or_u, which: SpectralWindow | None = None) -> np.ndarray:
    """Eigenvectors of a Hermitian or unitary matrix picked by a spectral window.

    Returns an array of shape ``(count, dim)``; each row is a normalized state.
    Hermitian input is ranked by energy, unitary input by eigenphase in (-pi, pi].
    """
    m = as_matrix(h_or_u)
    which = which or SpectralWindow()
    if hermitian_defect(m) <= 1e-10:
        dec = eig_hermitian(m)
    elif unitary_defect(m) <= 1e-8:
        dec = eigphases_unitary(m)
    else:
        raise LinalgError("eigenstate_bank needs a Hermitian or unitary matrix")
    idx = which.indices(dec.dim)
    if idx.size == 0:
        raise ValueError(f"spectral window {which} selects no eigenstates out of {dec.dim}")
    states = dec.vectors[:, idx].T.copy()
    return states / np.linalg.norm(states, axis=1, keepdims=True)
