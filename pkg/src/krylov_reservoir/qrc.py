"""Quantum reservoir computing on an exact-diagonalization regression task.

Task: given the ground state of an Ising chain at field ``hz``, predict its
first excited energy. The test set is a contiguous interior band of the
``hz`` grid, so the readout has to interpolate across unseen parameters.

Pipeline per circuit: ``|psi0(hz)> -> U |psi0(hz)> -> (<X_j>, <Z_j>)_j -> ridge``.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .circuits import ALL_FAMILIES, apply_circuit, pauli_features, sample_circuit
from .spinmodels import IsingParams, build_ising

__all__ = [
    "BenchmarkResult",
    "QrcDataset",
    "RankDeficiencyError",
    "RidgeModel",
    "benchmark_circuit",
    "build_dataset",
    "circuit_seed",
    "collect_benchmark",
    "evaluate",
    "load_dataset",
    "reservoir_features",
    "ridge_fit",
    "run_family_benchmark",
    "save_dataset",
    "select_gamma",
]

DEFAULT_GAMMA_GRID = (1e-8, 1e-6, 1e-4, 1e-2, 1.0)


class RankDeficiencyError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class QrcDataset:
    n: int
    params: np.ndarray
    inputs: np.ndarray
    targets: np.ndarray
    ground_energies: np.ndarray
    test_index: np.ndarray
    flagged: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def train_index(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.params.size), self.test_index)


def _interior_band(size: int, fraction: float) -> np.ndarray:
    count = int(round(fraction * size))
    start = (size - count) // 2
    return np.arange(start, start + count)


def build_dataset(
    n: int,
    hz_grid=None,
    n_samples: int = 60,
    hz_range: tuple[float, float] = (0.0, 2.0),
    test_fraction: float = 0.3,
    hx: float = 1.0,
    j_coupling: float = 1.0,
) -> QrcDataset:
    """Ground states and first excited energies of the full-space Ising chain.

    Samples whose ground-state gap is below 1e-10 are listed in ``flagged``.
    """
    grid = np.linspace(*hz_range, n_samples) if hz_grid is None else np.asarray(hz_grid, dtype=float)
    if grid.size < 10:
        raise ValueError("need at least 10 parameter values")
    states, e0, e1 = [], [], []
    for hz in grid:
        h = build_ising(IsingParams(n, hz=hz, hx=hx, j_coupling=j_coupling))
        vals, vecs = np.linalg.eigh(h)
        e0.append(vals[0])
        e1.append(vals[1])
        states.append(vecs[:, 0])
    e0, e1 = np.array(e0), np.array(e1)
    flagged = np.flatnonzero(e1 - e0 < 1e-10)
    return QrcDataset(n, grid, np.array(states), e1, e0, _interior_band(grid.size, test_fraction), flagged)


def save_dataset(ds: QrcDataset, fh) -> None:
    """Write ``hz, E0, E1, re_0..re_{d-1}, im_0..im_{d-1}`` rows, 17 significant digits."""
    d = 2**ds.n
    fh.write(f"# n={ds.n} test_start={ds.test_index[0]} test_count={ds.test_index.size}\n")
    cols = ["hz", "E0", "E1"] + [f"re_{i}" for i in range(d)] + [f"im_{i}" for i in range(d)]
    fh.write(",".join(cols) + "\n")
    for i in range(ds.params.size):
        row = [ds.params[i], ds.ground_energies[i], ds.targets[i], *ds.inputs[i].real, *ds.inputs[i].imag]
        fh.write(",".join(f"{x:.17g}" for x in row) + "\n")


def load_dataset(fh) -> QrcDataset:
    meta = dict(kv.split("=") for kv in fh.readline().lstrip("# ").split())
    n = int(meta["n"])
    fh.readline()
    data = np.loadtxt(io.StringIO(fh.read()), delimiter=",", ndmin=2)
    d = 2**n
    inputs = data[:, 3 : 3 + d] + 1j * data[:, 3 + d : 3 + 2 * d]
    start, count = int(meta["test_start"]), int(meta["test_count"])
    flagged = np.flatnonzero(data[:, 2] - data[:, 1] < 1e-10)
    return QrcDataset(n, data[:, 0], inputs, data[:, 2], data[:, 1], np.arange(start, start + count), flagged)


@dataclass(frozen=True)
class RidgeModel:
    weights: np.ndarray
    bias: np.ndarray
    gamma: float

    def predict(self, features) -> np.ndarray:
        x = np.asarray(features, dtype=float)
        out = x @ self.weights.T + self.bias
        return out[:, 0] if self.weights.shape[0] == 1 else out


def ridge_fit(features, targets, gamma: float) -> RidgeModel:
    """Ridge regression with an unpenalized intercept.

    Minimizes ``sum_i |y_i - W x_i - c|^2 + gamma |W|^2`` by solving the normal
    equations directly. (Dividing the data term by the sample count ``T`` is
    the same problem with ``gamma / T``.)
    """
    x = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float)
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError(f"features {x.shape} and targets {y.shape} disagree")
    y2 = y[:, None] if y.ndim == 1 else y
    z = np.hstack([x, np.ones((x.shape[0], 1))])
    penalty = np.full(z.shape[1], float(gamma))
    penalty[-1] = 0.0
    gram = z.T @ z + np.diag(penalty)
    if gamma == 0 and np.linalg.matrix_rank(z) < z.shape[1]:
        raise RankDeficiencyError("features are rank deficient at gamma = 0; use gamma > 0")
    coef = np.linalg.solve(gram, z.T @ y2)
    return RidgeModel(coef[:-1].T.copy(), coef[-1].copy(), float(gamma))


def evaluate(model: RidgeModel, features, targets) -> float:
    """Mean squared error of the readout (no regularization term)."""
    y = np.asarray(targets, dtype=float)
    pred = model.predict(features)
    if pred.shape != y.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match targets {y.shape}")
    return float(np.mean((pred - y) ** 2))


def select_gamma(features, targets, gamma_grid=DEFAULT_GAMMA_GRID, n_chunks: int = 5) -> float:
    """Pick gamma by leave-one-contiguous-chunk-out validation; ties go to the smaller gamma."""
    x = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float)
    chunks = np.array_split(np.arange(y.size), n_chunks)
    best, best_score = None, math.inf
    for gamma in sorted(gamma_grid):
        score = 0.0
        for held in chunks:
            keep = np.setdiff1d(np.arange(y.size), held)
            score += evaluate(ridge_fit(x[keep], y[keep], gamma), x[held], y[held])
        if score < best_score:
            best, best_score = gamma, score
    return float(best)


def reservoir_features(ds: QrcDataset, circuit) -> np.ndarray:
    return pauli_features(apply_circuit(circuit, ds.inputs), ds.n)


@dataclass(frozen=True)
class BenchmarkResult:
    family: str
    seeds: np.ndarray
    mse: np.ndarray
    gammas: np.ndarray
    target_range: float

    @property
    def mean(self) -> float:
        return float(np.mean(self.mse))

    @property
    def median(self) -> float:
        return float(np.median(self.mse))

    @property
    def std(self) -> float:
        return float(np.std(self.mse))

    @property
    def normalized_mean(self) -> float:
        return self.mean / self.target_range**2


def circuit_seed(master_seed: int, family: str, index: int) -> int:
    """Seed of circuit ``index`` of ``family``; depends only on its arguments."""
    code = ALL_FAMILIES.index(family)
    return int(np.random.SeedSequence([master_seed, code, index]).generate_state(1, np.uint64)[0])


def benchmark_circuit(
    ds: QrcDataset,
    family: str,
    index: int,
    depth: int = 40,
    gamma_grid=DEFAULT_GAMMA_GRID,
    seed: int = 0,
) -> tuple[int, float, float]:
    """``(circuit seed, test MSE, selected gamma)`` for circuit ``index`` of ``family``."""
    train, test = ds.train_index, ds.test_index
    s = circuit_seed(seed, family, index)
    feats = reservoir_features(ds, sample_circuit(family, ds.n, depth, s))
    gamma = select_gamma(feats[train], ds.targets[train], gamma_grid)
    model = ridge_fit(feats[train], ds.targets[train], gamma)
    return s, evaluate(model, feats[test], ds.targets[test]), gamma


def run_family_benchmark(
    ds: QrcDataset,
    family: str,
    n_circuits: int = 100,
    depth: int = 40,
    gamma_grid=DEFAULT_GAMMA_GRID,
    seed: int = 0,
    index_offset: int = 0,
) -> BenchmarkResult:
    """Test MSE of ``n_circuits`` random reservoirs drawn from ``family``."""
    runs = [
        benchmark_circuit(ds, family, i, depth, gamma_grid, seed)
        for i in range(index_offset, index_offset + n_circuits)
    ]
    return collect_benchmark(ds, family, runs)


def collect_benchmark(ds: QrcDataset, family: str, runs) -> BenchmarkResult:
    """Bundle ``benchmark_circuit`` outputs (in index order) into a :class:`BenchmarkResult`."""
    seeds, mses, gammas = zip(*runs) if runs else ((), (), ())
    span = float(np.ptp(ds.targets))
    return BenchmarkResult(
        family, np.array(seeds, dtype=np.uint64), np.array(mses, dtype=float), np.array(gammas, dtype=float), span
    )
