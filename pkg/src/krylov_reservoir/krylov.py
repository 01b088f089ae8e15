"""State Lanczos recursion and Krylov (spread) complexity.

The Lanczos recursion maps ``H`` acting on ``psi0`` to a tridiagonal chain with
onsite energies ``a`` and hoppings ``b``.  Time evolution is done exactly on
that chain via the eigendecomposition of the tridiagonal matrix, so
``|psi_k(t)|^2`` carries no time-stepping error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .matrixcore import LinalgError, as_matrix, hermitian_defect

__all__ = [
    "ComplexitySeries",
    "LanczosSequence",
    "ScramblingNotReached",
    "default_t_max",
    "evolve_krylov",
    "k_complexity_series",
    "k_complexity_truncated",
    "lanczos_spectral",
    "lanczos_state",
    "lanczos_variances",
    "scrambling_time",
    "truncate",
]

DEFAULT_EPS_B = 1e-10


class ScramblingNotReached(RuntimeError):
    def __init__(self, attained: float, target: float):
        super().__init__(f"K-complexity peaked at {attained:.6g} below half-plateau {target:.6g}")
        self.attained = attained
        self.target = target


@dataclass(frozen=True)
class LanczosSequence:
    """Lanczos coefficients; ``b[k]`` couples chain sites ``k`` and ``k + 1``."""

    a: np.ndarray
    b: np.ndarray
    basis: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.a.size < 1:
            raise ValueError("empty Lanczos sequence")
        if self.b.size != self.a.size - 1:
            raise ValueError(f"need len(b) == len(a) - 1, got {self.b.size} and {self.a.size}")

    @property
    def dim(self) -> int:
        return self.a.size

    def tridiagonal(self) -> np.ndarray:
        return np.diag(self.a) + np.diag(self.b, 1) + np.diag(self.b, -1)


def lanczos_state(
    h,
    psi0,
    eps_b: float = DEFAULT_EPS_B,
    max_dim: int | None = None,
    store_basis: bool = False,
) -> LanczosSequence:
    """Lanczos tridiagonalization of ``h`` seeded with ``psi0``.

    Every new vector is orthogonalized against the whole stored basis (two
    classical Gram-Schmidt passes). The recursion stops when the next hopping
    falls to ``eps_b * max|h_ij|`` or below, or after ``max_dim`` vectors.
    Real input stays in real arithmetic.
    """
    h = as_matrix(h)
    psi0 = np.asarray(psi0)
    if not (np.any(h.imag) or np.iscomplexobj(psi0) and np.any(psi0.imag)):
        h, psi0 = h.real.copy(), psi0.real
    dim = h.shape[0]
    defect = hermitian_defect(h)
    if defect > 1e-10:
        raise LinalgError(f"Lanczos needs a Hermitian matrix: max |H - H^dagger| = {defect:.3e}")
    if psi0.shape != (dim,):
        raise LinalgError(f"state of shape {psi0.shape} does not match dim {dim}")
    norm = float(np.linalg.norm(psi0))
    if abs(norm - 1.0) > 1e-12:
        raise LinalgError(f"initial state must be normalized, |psi0| = {norm!r}")
    if max_dim is None:
        max_dim = dim
    if not 1 <= max_dim <= dim:
        raise LinalgError(f"max_dim must lie in [1, {dim}], got {max_dim}")

    threshold = eps_b * float(np.max(np.abs(h)))
    v = np.zeros((dim, max_dim), dtype=h.dtype)
    v[:, 0] = psi0
    a = np.zeros(max_dim)
    b = np.zeros(max(max_dim - 1, 0))
    size = max_dim
    for j in range(max_dim):
        w = h @ v[:, j]
        a[j] = np.vdot(v[:, j], w).real
        basis = v[:, : j + 1]
        for _ in range(2):
            w = w - basis @ (basis.conj().T @ w)
        if j == max_dim - 1:
            break
        beta = float(np.linalg.norm(w))
        if beta <= threshold:
            size = j + 1
            break
        b[j] = beta
        v[:, j + 1] = w / beta
    return LanczosSequence(a[:size].copy(), b[: size - 1].copy(), v[:, :size].copy() if store_basis else None)


def lanczos_spectral(
    energies,
    vectors,
    psi0,
    eps_b: float = DEFAULT_EPS_B,
    weight_tol: float = 1e-20,
    degeneracy_tol: float = 1e-9,
) -> LanczosSequence:
    """Lanczos coefficients of ``H = V diag(E) V^dagger`` from its spectral measure.

    Equivalent to :func:`lanczos_state` in exact arithmetic, but overlaps with
    weight ``|<E_j|psi0>|^2 <= weight_tol`` are dropped and levels closer than
    ``degeneracy_tol * (max|E| or 1)`` are merged before the recursion. Running
    on the diagonal operator keeps exactly invariant subspaces exact, so the
    chain length equals the number of distinct occupied levels. Applying the
    dense recursion to a block-diagonal ``H`` instead amplifies rounding-level
    leakage between blocks into spurious hoppings far above ``eps_b``.
    """
    e = np.asarray(energies, dtype=float)
    vecs = as_matrix(vectors)
    psi0 = np.asarray(psi0)
    if vecs.shape[1] != e.size or psi0.shape != (vecs.shape[0],):
        raise LinalgError("energies, vectors and psi0 have inconsistent shapes")
    norm = float(np.linalg.norm(psi0))
    if abs(norm - 1.0) > 1e-12:
        raise LinalgError(f"initial state must be normalized, |psi0| = {norm!r}")
    w = np.abs(vecs.conj().T @ psi0) ** 2
    keep = w > weight_tol
    e, w = e[keep], w[keep]
    order = np.argsort(e, kind="stable")
    e, w = e[order], w[order]
    scale = float(np.max(np.abs(e))) if e.size else 1.0
    # merge runs of levels separated by less than the tolerance
    starts = np.concatenate([[True], np.diff(e) > degeneracy_tol * (scale or 1.0)])
    group = np.cumsum(starts) - 1
    weight = np.bincount(group, weights=w)
    level = np.bincount(group, weights=w * e) / weight
    d = np.diag(level)
    return lanczos_state(d, np.sqrt(weight / weight.sum()), eps_b=eps_b)


def truncate(seq: LanczosSequence, ls_fraction: float) -> LanczosSequence:
    """Keep the leading ``ceil(ls_fraction * D)`` chain sites (hard wall after them)."""
    if not 0.0 < ls_fraction <= 1.0:
        raise ValueError("ls_fraction must lie in (0, 1]")
    m = math.ceil(ls_fraction * seq.dim)
    if m == seq.dim:
        return seq
    return LanczosSequence(seq.a[:m].copy(), seq.b[: m - 1].copy())


def evolve_krylov(seq: LanczosSequence, times) -> np.ndarray:
    """Amplitudes ``psi_k(t)`` on the Krylov chain, rows = times, columns = sites.

    Solves ``i d/dt psi = T psi`` with ``psi(0) = e_0`` by diagonalizing the
    tridiagonal ``T`` once.
    """
    times = np.asarray(times, dtype=float)
    if not np.all(np.isfinite(times)):
        raise ValueError("times must be finite")
    if seq.dim == 1:
        return np.exp(-1j * seq.a[0] * times)[:, None]
    energies, vecs = scipy.linalg.eigh_tridiagonal(seq.a, seq.b)
    phases = np.exp(-1j * np.outer(times, energies)) * vecs[0][None, :]
    # vecs is real: two real products instead of one complex one
    psi = (phases.real @ vecs.T) + 1j * (phases.imag @ vecs.T)
    # pin t = 0 to the exact initial condition
    psi[times == 0.0] = 0.0
    psi[times == 0.0, 0] = 1.0
    return psi


@dataclass(frozen=True)
class ComplexitySeries:
    times: np.ndarray
    values: np.ndarray
    plateau_mean: float
    plateau_window: tuple[float, float]

    @property
    def max_value(self) -> float:
        return float(np.max(self.values))


def default_t_max(seq: LanczosSequence) -> float:
    """Five times the saturation scale ``D / <b>``."""
    if seq.dim == 1:
        return 1.0
    return 5.0 * seq.dim / float(np.mean(seq.b))


def _series(chain: LanczosSequence, t_max: float, n_times: int) -> ComplexitySeries:
    if n_times < 2:
        raise ValueError("need at least two time points")
    if not t_max > 0:
        raise ValueError("t_max must be positive")
    times = np.linspace(0.0, t_max, n_times)
    probs = np.abs(evolve_krylov(chain, times)) ** 2
    values = probs @ np.arange(chain.dim, dtype=float)
    half = n_times // 2
    return ComplexitySeries(times, values, float(values[half:].mean()), (float(times[half]), float(t_max)))


def k_complexity_series(seq: LanczosSequence, t_max: float | None = None, n_times: int = 1000) -> ComplexitySeries:
    """``C_K(t) = sum_k k |psi_k(t)|^2`` on a uniform grid over ``[0, t_max]``.

    The plateau is the mean over the second half of the grid.
    """
    return _series(seq, default_t_max(seq) if t_max is None else t_max, n_times)


def k_complexity_truncated(
    seq: LanczosSequence, ls_fraction: float, t_max: float | None = None, n_times: int = 1000
) -> ComplexitySeries:
    """Same as :func:`k_complexity_series` on the chain cut to its leading
    ``ls_fraction``; the default time window is still set by the full sequence."""
    chain = truncate(seq, ls_fraction)
    return _series(chain, default_t_max(seq) if t_max is None else t_max, n_times)


def scrambling_time(series: ComplexitySeries) -> float:
    """First time ``C_K`` reaches half its plateau, linearly interpolated."""
    target = 0.5 * series.plateau_mean
    if not target > 0:
        raise ValueError("plateau mean must be positive")
    values = series.values
    hits = np.flatnonzero(values >= target)
    if hits.size == 0:
        raise ScramblingNotReached(float(values.max()), target)
    i = int(hits[0])
    if i == 0:
        return float(series.times[0])
    t0, t1 = series.times[i - 1], series.times[i]
    c0, c1 = values[i - 1], values[i]
    return float(t0 + (target - c0) * (t1 - t0) / (c1 - c0))


def lanczos_variances(seq: LanczosSequence, ls_fraction: float = 1.0) -> tuple[float, float]:
    """Sample variances (ddof=1) of the leading ``ceil(ls_fraction * D)`` ``a`` and ``b``.

    ``var_b`` is NaN when fewer than two hoppings exist in that range.
    """
    if not 0.0 < ls_fraction <= 1.0:
        raise ValueError("ls_fraction must lie in (0, 1]")
    m = math.ceil(ls_fraction * seq.dim)
    if m < 2:
        raise ValueError(f"ls_fraction={ls_fraction} keeps {m} coefficient(s); need at least 2")
    b = seq.b[:m]
    var_b = float(np.var(b, ddof=1)) if b.size >= 2 else math.nan
    return float(np.var(seq.a[:m], ddof=1)), var_b
