"""Dense complex linear algebra used throughout the package.

Matrices are plain ``numpy`` arrays of dtype ``complex128``; the helpers here
add the checks (Hermiticity, unitarity) and the spectral conventions the rest
of the code relies on:

* eigenvalues are returned in ascending order;
* eigenphases of a unitary live in the half-open interval (-pi, pi];
* ``log_unitary`` and ``exp_hermitian_to_unitary`` are exact inverses for the
  sign convention ``U = exp(+i T H / hbar)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

__all__ = [
    "EigenDecomposition",
    "LinalgError",
    "NotHermitianError",
    "NotUnitaryError",
    "as_matrix",
    "eig_hermitian",
    "eigphases_unitary",
    "exp_hermitian_to_unitary",
    "is_hermitian",
    "is_unitary",
    "kron",
    "log_unitary",
]


class LinalgError(ValueError):
    """Base class for rejected inputs and failed decompositions."""


class NotHermitianError(LinalgError):
    pass


class NotUnitaryError(LinalgError):
    pass


@dataclass(frozen=True)
class EigenDecomposition:
    """Ascending real spectrum with orthonormal eigenvectors in the columns."""

    values: np.ndarray
    vectors: np.ndarray

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def reconstruct(self, func=None) -> np.ndarray:
        """Return ``V diag(f(values)) V^dagger``; identity ``f`` by default."""
        d = self.values if func is None else func(self.values)
        return (self.vectors * d[None, :]) @ self.vectors.conj().T


def as_matrix(m) -> np.ndarray:
    """Validate a square matrix and return it as a complex array."""
    a = np.asarray(m, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise LinalgError(f"expected a non-empty square matrix, got shape {a.shape}")
    return a


def hermitian_defect(m: np.ndarray) -> float:
    return float(np.max(np.abs(m - m.conj().T)))


def unitary_defect(m: np.ndarray) -> float:
    return float(np.max(np.abs(m @ m.conj().T - np.eye(m.shape[0]))))


def is_hermitian(m, tol: float = 1e-10) -> bool:
    return hermitian_defect(as_matrix(m)) <= tol


def is_unitary(m, tol: float = 1e-8) -> bool:
    return unitary_defect(as_matrix(m)) <= tol


def _require_hermitian(m: np.ndarray, tol: float) -> None:
    defect = hermitian_defect(m)
    if defect > tol:
        raise NotHermitianError(f"matrix is not Hermitian: max |M - M^dagger| = {defect:.3e} > {tol:.1e}")


def _require_unitary(m: np.ndarray, tol: float) -> None:
    defect = unitary_defect(m)
    if defect > tol:
        raise NotUnitaryError(f"matrix is not unitary: max |M M^dagger - I| = {defect:.3e} > {tol:.1e}")


def kron(a, b) -> np.ndarray:
    """Kronecker product with ``a`` as the leading (most significant) factor."""
    return np.kron(as_matrix(a), as_matrix(b))


def eig_hermitian(h, tol: float = 1e-10) -> EigenDecomposition:
    """Eigendecomposition of a Hermitian matrix.

    Raises
    ------
    NotHermitianError
        If ``max |h - h^dagger| > tol``.
    """
    h = as_matrix(h)
    _require_hermitian(h, tol)
    # symmetrize so the LAPACK driver sees exactly Hermitian input
    values, vectors = np.linalg.eigh(0.5 * (h + h.conj().T))
    return EigenDecomposition(values, vectors)


def eigphases_unitary(u, tol: float = 1e-8) -> EigenDecomposition:
    """Eigenphases in (-pi, pi] and orthonormal eigenvectors of a unitary.

    Uses the complex Schur form: for a normal matrix the triangular factor is
    diagonal up to rounding and the Schur vectors are exactly orthonormal, which
    keeps degenerate clusters well conditioned.
    """
    u = as_matrix(u)
    _require_unitary(u, tol)
    t, z = scipy.linalg.schur(u, output="complex")
    phases = np.angle(np.diag(t))
    # np.angle returns [-pi, pi]; fold the -pi edge onto +pi
    phases = np.where(phases <= -np.pi, phases + 2.0 * np.pi, phases)
    order = np.argsort(phases, kind="stable")
    return EigenDecomposition(phases[order], z[:, order])


def log_unitary(u, time: float = 1.0, hbar: float = 1.0, tol: float = 1e-8) -> np.ndarray:
    """Effective Hamiltonian ``(hbar / time) * (-i) log(u)`` on the principal branch.

    The result ``h`` satisfies ``exp_hermitian_to_unitary(h, time, hbar, +1) == u``.
    Faithful to an underlying generator only while its spectrum times
    ``time / hbar`` fits inside (-pi, pi]; wider spectra wrap around.
    """
    if time <= 0 or hbar <= 0:
        raise LinalgError("time and hbar must be positive")
    u = as_matrix(u)
    dec = eigphases_unitary(u, tol)
    residual = float(np.max(np.abs(dec.reconstruct(lambda th: np.exp(1j * th)) - u)))
    if residual > 1e-6:
        raise LinalgError(f"unitary decomposition is defective: reconstruction residual {residual:.3e}")
    h = dec.reconstruct() * (hbar / time)
    return 0.5 * (h + h.conj().T)


def exp_hermitian_to_unitary(h, time: float, hbar: float = 1.0, sign: int = 1) -> np.ndarray:
    """``V diag(exp(sign * i * E * time / hbar)) V^dagger`` for Hermitian ``h``."""
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    if hbar <= 0:
        raise LinalgError("hbar must be positive")
    dec = eig_hermitian(h)
    return dec.reconstruct(lambda e: np.exp(sign * 1j * e * time / hbar))
