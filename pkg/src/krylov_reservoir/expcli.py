"""Experiment runners E1-E6, a flat ``key = value`` config format and the CLI.

Every run writes ``<out>/<ID>.csv`` (plus auxiliary tables such as
``E5_circuits.csv``) and ``<out>/<ID>.meta.json``. CSV rows carry the config
hash; the metadata file holds the resolved config, library versions, the
conventions in force and a timestamp (the only field that changes between
identical reruns).

Worker threads only change scheduling: tasks are indexed, their seeds derive
from the index, and results are reassembled in index order before any
reduction. BLAS is pinned to one thread inside a run.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import math
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy
import scipy.stats
from threadpoolctl import threadpool_limits

from . import __version__
from .circuits import FAMILIES, circuit_unitary, sample_circuit
from .krylov import (
    ScramblingNotReached,
    k_complexity_series,
    k_complexity_truncated,
    lanczos_spectral,
    lanczos_state,
    lanczos_variances,
    scrambling_time,
)
from .matrixcore import LinalgError, eig_hermitian, eigphases_unitary, log_unitary
from .qrc import DEFAULT_GAMMA_GRID, benchmark_circuit, build_dataset, circuit_seed, collect_benchmark
from .spectralstats import heisenberg_time, r_statistic, r_statistic_phases
from .spinmodels import (
    IsingParams,
    SpectralWindow,
    StandardMapParams,
    build_ising,
    build_standard_map,
    eigenstate_bank,
    parity_basis,
    project_operator,
)

__all__ = [
    "EXPERIMENTS",
    "ConfigError",
    "ExperimentConfig",
    "ExperimentResult",
    "PlotSpec",
    "PowerLawFit",
    "Table",
    "config_hash",
    "emit_plot",
    "fit_power_law",
    "load_config",
    "main",
    "parse_config_text",
    "permutation_exceedance",
    "run_experiment",
    "write_result",
]

EXPERIMENTS = ("E1", "E2", "E3", "E4", "E5", "E6")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

# desk-scale ensemble sizes per qubit count; --full-scale uses 100 everywhere
DESK_CIRCUITS = {6: 100, 8: 25, 10: 10}

CONVENTIONS = {
    "qubit_order": "qubit 0 is the most significant bit / leftmost tensor factor",
    "ising": "H = sum_k (hx X_k + hz Z_k) - J sum_k Z_k Z_{k+1}, open chain, positive reflection parity",
    "standard_map_hbar": "hbar = 1 / (2 pi N)",
    "effective_hamiltonian": "H_eff = (hbar / T) (-i) log U, principal branch, eigenphases in (-pi, pi]",
    "plateau": "mean of C_K over the last half of a uniform grid on [0, 5 D / <b>]",
    "scrambling_time": "first half-plateau crossing, linear interpolation; median over the state bank",
    "variances": "per-sequence sample variance (ddof=1), averaged over the ensemble",
    "ck_spread": "Var(C_k) is the sample variance (ddof=1) of per-run plateau means across the ensemble",
    "reservoir_time": "circuit H_eff at T = 1 with hbar = 1",
    "reservoir_normalization": "C_k and its variance are computed on C_k / 2^n",
    "connectivity": "all-to-all CNOT and matchgate placement unless nearest_neighbor = true",
}


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration (CLI exit code 2)."""


# ---------------------------------------------------------------- config


def _floats(v: str) -> tuple[float, ...]:
    return tuple(float(x) for x in v.split(",") if x.strip())


def _ints(v: str) -> tuple[int, ...]:
    return tuple(int(x) for x in v.split(",") if x.strip())


def _strs(v: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in v.split(",") if x.strip())


def _bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved experiment parameters. ``None`` fields take experiment defaults."""

    experiment: str
    seed: int = 0
    threads: int = 1
    out: str = "results"
    full_scale: bool = False
    # Ising chain (E1-E3)
    n: int = 10
    n_grid: tuple[int, ...] | None = None
    hz_grid: tuple[float, ...] | None = None
    hz_ref: float = 1.0
    hx: float = 1.0
    j_coupling: float = 1.0
    bank_hz: float = 6.0
    bank_size: int = 8
    time_scales: tuple[str, ...] = ("H", "tS/25", "tS", "tH")
    ls_fractions: tuple[float, ...] = (1.0, 0.5, 0.25, 0.125)
    n_times: int = 1000
    # standard map (E4)
    k_grid: tuple[float, ...] = (0.05, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0)
    n_hilbert_grid: tuple[int, ...] = (200, 400)
    krylov_n_hilbert: tuple[int, ...] = (200,)
    bank_k: float = 0.01
    map_bank_size: int = 100
    kick_scale: float = 1.0 / (4.0 * math.pi**2)
    bloch_x: float = 0.0
    bloch_p: float = 0.25
    # reservoirs (E5, E6)
    families: tuple[str, ...] = FAMILIES
    n_circuits: int | None = None
    depth: int = 40
    nearest_neighbor: bool = False
    circuit_degeneracy: str = "keep"
    n_samples: int = 60
    hz_range: tuple[float, ...] = (0.0, 2.0)
    test_fraction: float = 0.3
    gamma_grid: tuple[float, ...] = DEFAULT_GAMMA_GRID
    n_shuffles: int = 100
    e5_csv: str | None = None

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        for name in ("n_grid", "hz_grid", "time_scales", "ls_fractions", "k_grid", "n_hilbert_grid", "families"):
            value = getattr(self, name)
            if value is not None and len(value) == 0:
                raise ConfigError(f"{name} must not be empty")
        if self.n_circuits is not None and self.n_circuits < 1:
            raise ConfigError("n_circuits must be at least 1")
        if self.bank_size < 1 or self.map_bank_size < 1:
            raise ConfigError("state banks need at least one state")
        if self.n_shuffles < 1:
            raise ConfigError("n_shuffles must be at least 1")
        if self.n_times < 2:
            raise ConfigError("n_times must be at least 2")
        if self.circuit_degeneracy not in ("keep", "collapse"):
            raise ConfigError("circuit_degeneracy must be 'keep' or 'collapse'")
        if len(self.hz_range) != 2:
            raise ConfigError("hz_range takes two values")
        for f in self.ls_fractions:
            if not 0.0 < f <= 1.0:
                raise ConfigError(f"ls_fraction {f} outside (0, 1]")
        for fam in self.families:
            if fam not in FAMILIES + ("ID",):
                raise ConfigError(f"unknown circuit family {fam!r}")
        for scale in self.time_scales:
            _parse_scale(scale)

    # experiment-dependent defaults
    def resolved_n_grid(self) -> tuple[int, ...]:
        if self.n_grid is not None:
            return self.n_grid
        if self.experiment == "E1":
            return (6, 8, 10, 12) if self.full_scale else (6, 8, 10)
        if self.experiment == "E5":
            return (6, 8, 10) if self.full_scale else (6, 8)
        return (6,)

    def resolved_hz_grid(self) -> tuple[float, ...]:
        if self.hz_grid is not None:
            return self.hz_grid
        if self.experiment == "E3":
            return (0.05, 0.1, 0.2, 0.35, 0.5, 0.75, 1.0, 1.25, 1.5)
        return (0.05, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0)

    def circuits_for(self, n: int) -> int:
        if self.n_circuits is not None:
            return self.n_circuits
        return 100 if self.full_scale else DESK_CIRCUITS.get(n, 10)

    def hashed_fields(self) -> dict:
        """Every field that can change results (``out`` and ``threads`` cannot)."""
        d = dataclasses.asdict(self)
        d.pop("out")
        d.pop("threads")
        d["n_grid"] = self.resolved_n_grid()
        d["hz_grid"] = self.resolved_hz_grid()
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


_FIELD_PARSERS = {
    "seed": int,
    "threads": int,
    "out": str,
    "full_scale": _bool,
    "n": int,
    "n_grid": _ints,
    "hz_grid": _floats,
    "hz_ref": float,
    "hx": float,
    "j_coupling": float,
    "bank_hz": float,
    "bank_size": int,
    "time_scales": _strs,
    "ls_fractions": _floats,
    "n_times": int,
    "k_grid": _floats,
    "n_hilbert_grid": _ints,
    "krylov_n_hilbert": _ints,
    "bank_k": float,
    "map_bank_size": int,
    "kick_scale": float,
    "bloch_x": float,
    "bloch_p": float,
    "families": _strs,
    "n_circuits": int,
    "depth": int,
    "nearest_neighbor": _bool,
    "circuit_degeneracy": str,
    "n_samples": int,
    "hz_range": _floats,
    "test_fraction": float,
    "gamma_grid": _floats,
    "n_shuffles": int,
    "e5_csv": str,
    "experiment": str,
}


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment, lists are comma separated."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _FIELD_PARSERS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = _FIELD_PARSERS[key](value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    return values


def load_config(path, experiment: str | None = None, **overrides) -> ExperimentConfig:
    """Read a config file; ``experiment`` and non-None ``overrides`` win over file values."""
    try:
        text = Path(path).read_text(encoding="utf-8") if path is not None else ""
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    values = parse_config_text(text)
    if experiment is not None:
        if values.get("experiment", experiment) != experiment:
            raise ConfigError(f"config is for {values['experiment']}, not {experiment}")
        values["experiment"] = experiment
    values.update({k: v for k, v in overrides.items() if v is not None})
    if "experiment" not in values:
        raise ConfigError("no experiment given")
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def config_hash(cfg: ExperimentConfig) -> str:
    blob = json.dumps(cfg.hashed_fields(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------- results


@dataclass
class Table:
    columns: list[str]
    rows: list[list]


@dataclass
class ExperimentResult:
    experiment: str
    tables: dict[str, Table]
    notes: dict = field(default_factory=dict)

    @property
    def main(self) -> Table:
        return self.tables[self.experiment]


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def _csv_text(table: Table, digest: str) -> str:
    lines = [",".join(table.columns + ["config_hash"])]
    for row in table.rows:
        lines.append(",".join([_fmt(x) for x in row] + [digest]))
    return "\n".join(lines) + "\n"


def write_result(result: ExperimentResult, cfg: ExperimentConfig, out_dir=None) -> list[Path]:
    """Write every table as CSV plus a ``.meta.json`` block; returns the paths written."""
    out = Path(out_dir if out_dir is not None else cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    digest = config_hash(cfg)
    paths = []
    for name, table in result.tables.items():
        path = out / f"{name}.csv"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(_csv_text(table, digest))
        paths.append(path)
    meta = {
        "experiment": result.experiment,
        "config_hash": digest,
        "config": cfg.hashed_fields(),
        "threads": cfg.threads,
        "tables": sorted(result.tables),
        "versions": {
            "krylov_reservoir": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "conventions": CONVENTIONS,
        "notes": result.notes,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    meta_path = out / f"{result.experiment}.meta.json"
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")
    paths.append(meta_path)
    return paths


def _json_default(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialize {type(x).__name__}")


def read_csv_table(path) -> Table:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"{path}: empty CSV")
    return Table(rows[0], rows[1:])


# ---------------------------------------------------------------- helpers


def _pmap(fn, tasks, threads: int) -> list:
    """``[fn(t) for t in tasks]``, possibly on worker threads; order is preserved."""
    tasks = list(tasks)
    if threads <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, tasks))


def _parse_scale(scale: str) -> tuple[str, float]:
    """``'H'`` -> true Hamiltonian; ``'tH'``, ``'tS'``, ``'tS/25'`` -> (base, divisor)."""
    if scale == "H":
        return "H", 1.0
    base, _, div = scale.partition("/")
    if base not in ("tH", "tS"):
        raise ConfigError(f"unknown time scale {scale!r}; use H, tH, tS or tS/<divisor>")
    try:
        d = float(div) if div else 1.0
    except ValueError:
        raise ConfigError(f"bad divisor in time scale {scale!r}") from None
    if not d > 0:
        raise ConfigError(f"bad divisor in time scale {scale!r}")
    return base, d


def _ising_sector(cfg: ExperimentConfig, n: int, hz: float) -> np.ndarray:
    params = IsingParams(n, hz=hz, hx=cfg.hx, j_coupling=cfg.j_coupling)
    return project_operator(build_ising(params, sparse=True), parity_basis(n)).real


def _ising_bank(cfg: ExperimentConfig, n: int) -> np.ndarray:
    return eigenstate_bank(_ising_sector(cfg, n, cfg.bank_hz), SpectralWindow(count=cfg.bank_size))


def _scrambling_times(h, bank, n_times: int) -> tuple[list[float], int]:
    times, missed = [], 0
    for psi in bank:
        try:
            times.append(scrambling_time(k_complexity_series(lanczos_state(h, psi), n_times=n_times)))
        except ScramblingNotReached:
            missed += 1
    return times, missed


def _median_ts(h, bank, n_times: int) -> float:
    times, _ = _scrambling_times(h, bank, n_times)
    if not times:
        raise LinalgError("no state in the bank reached half of its K-complexity plateau")
    return float(np.median(times))


def _plateau(seq, n_times: int, ls_fraction: float = 1.0) -> float:
    if seq.dim == 1:
        return 0.0
    return k_complexity_truncated(seq, ls_fraction, n_times=n_times).plateau_mean


def _krylov_stats(seqs, ls_fraction: float, n_times: int, scale: float = 1.0) -> list[float]:
    """Ensemble means of var_a, var_b, C_k and the spread of C_k (ddof=1)."""
    va, vb, ck = [], [], []
    for seq in seqs:
        if math.ceil(ls_fraction * seq.dim) >= 2:
            a, b = lanczos_variances(seq, ls_fraction)
            va.append(a)
            vb.append(b)
        ck.append(_plateau(seq, n_times, ls_fraction) / scale)
    ck_arr = np.array(ck)
    spread = float(np.var(ck_arr, ddof=1)) if ck_arr.size > 1 else 0.0
    return [_nanmean(va), _nanmean(vb), float(ck_arr.mean()), spread]


def _nanmean(values) -> float:
    arr = np.asarray(values, dtype=float)
    arr = arr[~np.isnan(arr)]
    return float(arr.mean()) if arr.size else math.nan


@dataclass(frozen=True)
class PowerLawFit:
    exponent: float
    prefactor: float
    stderr: float
    ci_low: float
    ci_high: float


def fit_power_law(x, y, confidence: float = 0.95) -> PowerLawFit:
    """Least-squares fit of ``log y = log c + p log x``; CI from the t distribution."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.size < 2 or x.shape != y.shape or not (np.all(x > 0) and np.all(y > 0)):
        raise ValueError("need at least two points with positive coordinates")
    lx, ly = np.log(x), np.log(y)
    design = np.column_stack([lx, np.ones_like(lx)])
    coef, *_ = np.linalg.lstsq(design, ly, rcond=None)
    slope, icpt = float(coef[0]), float(coef[1])
    dof = lx.size - 2
    if dof > 0:
        resid = ly - design @ coef
        stderr = math.sqrt(float(resid @ resid) / dof / float(np.sum((lx - lx.mean()) ** 2)))
        half = float(scipy.stats.t.ppf(0.5 + confidence / 2, dof)) * stderr
    else:
        stderr, half = math.nan, math.nan
    return PowerLawFit(slope, math.exp(icpt), stderr, slope - half, slope + half)


def _spearman(x, y) -> float:
    return float(scipy.stats.spearmanr(x, y).statistic)


def permutation_exceedance(x, y, n_shuffles: int, rng: np.random.Generator) -> tuple[float, int]:
    """Observed Spearman rho and the number of label shuffles whose |rho| is strictly smaller."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    rho = _spearman(x, y)
    below = 0
    for _ in range(n_shuffles):
        if abs(_spearman(x, rng.permutation(y))) < abs(rho):
            below += 1
    return rho, below


# ---------------------------------------------------------------- E1


def run_e1(cfg: ExperimentConfig) -> ExperimentResult:
    """Median scrambling time versus chain length and its power-law exponent."""

    def task(n):
        h = _ising_sector(cfg, n, cfg.hz_ref)
        times, missed = _scrambling_times(h, _ising_bank(cfg, n), cfg.n_times)
        return n, h.shape[0], times, missed

    per_n = _pmap(task, cfg.resolved_n_grid(), cfg.threads)
    used = [(n, float(np.median(t))) for n, _, t, _ in per_n if t]
    if len(used) < 2:
        raise LinalgError("fewer than two chain lengths produced a scrambling time")
    fit = fit_power_law([u[0] for u in used], [u[1] for u in used])
    rows = []
    for n, dim, times, missed in per_n:
        med = float(np.median(times)) if times else math.nan
        rows.append([n, dim, med, len(times), missed, fit.exponent, fit.ci_low, fit.ci_high])
    cols = ["n", "dim", "median_t_s", "n_states", "n_excluded", "exponent", "exponent_ci_low", "exponent_ci_high"]
    notes = {"hz_ref": cfg.hz_ref, "excluded": {str(n): m for n, _, _, m in per_n}}
    return ExperimentResult("E1", {"E1": Table(cols, rows)}, notes)


# ---------------------------------------------------------------- E2


def _time_for(scale: str, t_s: float, t_h: float) -> float:
    base, div = _parse_scale(scale)
    return (t_s if base == "tS" else t_h) / div


def run_e2(cfg: ExperimentConfig) -> ExperimentResult:
    """Spacing ratio of H and of effective Hamiltonians at several periods."""
    bank = _ising_bank(cfg, cfg.n)
    scales = [s for s in cfg.time_scales if s != "H"]

    def task(hz):
        h = _ising_sector(cfg, cfg.n, hz)
        dec = eig_hermitian(h)
        t_s = _median_ts(h, bank, cfg.n_times)
        t_h = heisenberg_time(dec.values)
        width = float(dec.values[-1] - dec.values[0])
        row = [hz, r_statistic(dec.values), t_s, t_h]
        wraps = []
        for scale in scales:
            t = _time_for(scale, t_s, t_h)
            u = dec.reconstruct(lambda e: np.exp(1j * e * t))
            levels = eig_hermitian(log_unitary(u, t)).values
            row.append(r_statistic(levels))
            wraps.append(int(width * t // (2.0 * math.pi)))
        return row + wraps

    rows = _pmap(task, cfg.resolved_hz_grid(), cfg.threads)
    cols = ["hz", "r_H", "t_s", "t_h"] + [f"r_Heff_{s}" for s in scales] + [f"wraps_{s}" for s in scales]
    wrapped = {s: [r[0] for r in rows if r[4 + len(scales) + i] > 0] for i, s in enumerate(scales)}
    return ExperimentResult("E2", {"E2": Table(cols, rows)}, {"branch_wrap_hz": wrapped, "n": cfg.n})


# ---------------------------------------------------------------- E3


def run_e3(cfg: ExperimentConfig) -> ExperimentResult:
    """Lanczos variances and K-complexity plateaus of the Ising chain across hz."""
    bank = _ising_bank(cfg, cfg.n)

    def task(hz):
        h = _ising_sector(cfg, cfg.n, hz)
        dec = eig_hermitian(h)
        t_s = _median_ts(h, bank, cfg.n_times) if any(s.startswith("tS") for s in cfg.time_scales) else math.nan
        t_h = heisenberg_time(dec.values)
        rows = []
        for scale in cfg.time_scales:
            if scale == "H":
                seqs = [lanczos_state(h, psi) for psi in bank]
            else:
                t = _time_for(scale, t_s, t_h)
                heff = eigphases_unitary(dec.reconstruct(lambda e: np.exp(1j * e * t)))
                seqs = [lanczos_spectral(heff.values / t, heff.vectors, psi) for psi in bank]
            for f in cfg.ls_fractions:
                rows.append([hz, scale, f, *_krylov_stats(seqs, f, cfg.n_times)])
        return rows

    rows = [r for block in _pmap(task, cfg.resolved_hz_grid(), cfg.threads) for r in block]
    cols = ["hz", "scale", "ls_fraction", "var_a", "var_b", "ck_mean", "ck_var"]
    return ExperimentResult("E3", {"E3": Table(cols, rows)}, {"n": cfg.n, "bank_size": len(bank)})


# ---------------------------------------------------------------- E4


def _map_params(cfg: ExperimentConfig, n_hilbert: int, k: float) -> StandardMapParams:
    return StandardMapParams(n_hilbert, k, cfg.bloch_x, cfg.bloch_p, cfg.kick_scale)


def run_e4(cfg: ExperimentConfig) -> ExperimentResult:
    """Eigenphase statistics and Krylov statistics of the quantum standard map."""
    window = SpectralWindow(width=1.0, count=cfg.map_bank_size)
    banks = {
        nh: eigenstate_bank(build_standard_map(_map_params(cfg, nh, cfg.bank_k)), window)
        for nh in cfg.n_hilbert_grid
        if nh in cfg.krylov_n_hilbert
    }
    tasks = [(nh, k) for nh in cfg.n_hilbert_grid for k in cfg.k_grid]

    def task(item):
        nh, k = item
        dec = eigphases_unitary(build_standard_map(_map_params(cfg, nh, k)))
        row = [k, nh, r_statistic_phases(dec.values)]
        if nh in banks:
            seqs = [lanczos_spectral(dec.values, dec.vectors, psi) for psi in banks[nh]]
            row += _krylov_stats(seqs, 1.0, cfg.n_times)
        else:
            row += [math.nan] * 4
        return row

    rows = _pmap(task, tasks, cfg.threads)
    cols = ["k", "n_hilbert", "r_bar", "var_a", "var_b", "ck_mean", "ck_var"]
    return ExperimentResult("E4", {"E4": Table(cols, rows)}, {"bank_k": cfg.bank_k, "T": 1.0})


# ---------------------------------------------------------------- E5


def _circuit_krylov(cfg: ExperimentConfig, family: str, n: int, index: int) -> list:
    seed = circuit_seed(cfg.seed, family, index)
    circ = sample_circuit(family, n, cfg.depth, seed, nearest_neighbor=cfg.nearest_neighbor)
    dec = eigphases_unitary(circuit_unitary(circ))
    tol = None if cfg.circuit_degeneracy == "keep" else 1e-12
    r_bar = r_statistic_phases(dec.values, degeneracy_tol=tol)
    rng = np.random.Generator(np.random.Philox(key=[seed, 1]))
    start = int(rng.integers(2**n))
    psi = np.zeros(2**n, dtype=complex)
    psi[start] = 1.0
    seq = lanczos_spectral(dec.values, dec.vectors, psi)
    va, vb = lanczos_variances(seq) if seq.dim >= 2 else (math.nan, math.nan)
    ck = _plateau(seq, cfg.n_times)
    return [family, n, index, seed, start, seq.dim, r_bar, va, vb, ck, ck / 2**n]


CIRCUIT_COLUMNS = ["family", "n", "index", "seed", "start_state", "krylov_dim", "r_bar", "var_a", "var_b", "ck", "ck_norm"]
FAMILY_COLUMNS = ["family", "n", "n_circuits", "r_bar", "var_a", "var_b", "ck_norm_mean", "ck_norm_var", "krylov_dim_mean"]


def _family_rows(circuit_rows: list[list]) -> list[list]:
    groups: dict[tuple, list] = {}
    for row in circuit_rows:
        groups.setdefault((row[0], row[1]), []).append(row)
    out = []
    for (fam, n), rows in groups.items():
        arr = np.array([r[5:] for r in rows], dtype=float)
        ck = arr[:, 5]
        spread = float(np.var(ck, ddof=1)) if ck.size > 1 else 0.0
        out.append(
            [fam, n, len(rows), _nanmean(arr[:, 1]), _nanmean(arr[:, 2]), _nanmean(arr[:, 3]),
             float(ck.mean()), spread, float(arr[:, 0].mean())]
        )
    return out


def _e5_circuit_rows(cfg: ExperimentConfig, ns) -> tuple[list[list], list]:
    tasks = [(fam, n, i) for n in ns for fam in cfg.families for i in range(cfg.circuits_for(n))]

    def task(item):
        try:
            return _circuit_krylov(cfg, *item)
        except (LinalgError, np.linalg.LinAlgError) as exc:
            return item, str(exc)

    results = _pmap(task, tasks, cfg.threads)
    rows = [r for r in results if isinstance(r, list)]
    failed = [[*r[0], r[1]] for r in results if isinstance(r, tuple)]
    return rows, failed


def run_e5(cfg: ExperimentConfig) -> ExperimentResult:
    """Krylov statistics of circuit effective Hamiltonians, per family."""
    rows, failed = _e5_circuit_rows(cfg, cfg.resolved_n_grid())
    if not rows:
        raise LinalgError("every circuit failed")
    tables = {"E5": Table(FAMILY_COLUMNS, _family_rows(rows)), "E5_circuits": Table(CIRCUIT_COLUMNS, rows)}
    return ExperimentResult("E5", tables, {"failed": failed, "degeneracy": cfg.circuit_degeneracy})


# ---------------------------------------------------------------- E6


def _load_family_stats(path) -> dict[tuple[str, int], dict]:
    table = read_csv_table(path)
    hashes = {row[-1] for row in table.rows}
    if len(hashes) > 1:
        raise ConfigError(f"{path}: rows from {len(hashes)} different config hashes")
    missing = set(FAMILY_COLUMNS) - set(table.columns)
    if missing:
        raise ConfigError(f"{path}: missing columns {sorted(missing)}")
    out = {}
    for row in table.rows:
        rec = dict(zip(table.columns, row))
        out[(rec["family"], int(rec["n"]))] = {k: float(rec[k]) for k in ("r_bar", "ck_norm_mean", "ck_norm_var")}
    return out


def run_e6(cfg: ExperimentConfig) -> ExperimentResult:
    """Reservoir-computing test MSE per family and its correlation with chaos indicators."""
    ns = cfg.resolved_n_grid()
    if cfg.e5_csv is not None:
        stats = _load_family_stats(cfg.e5_csv)
        circuit_rows = []
    else:
        circuit_rows, _ = _e5_circuit_rows(cfg, ns)
        stats = {(r[0], r[1]): dict(zip(FAMILY_COLUMNS, r)) for r in _family_rows(circuit_rows)}

    rows, corr_rows = [], []
    rng = np.random.Generator(np.random.Philox(key=[cfg.seed, 6]))
    for n in ns:
        ds = build_dataset(n, n_samples=cfg.n_samples, hz_range=tuple(cfg.hz_range), test_fraction=cfg.test_fraction,
                           hx=cfg.hx, j_coupling=cfg.j_coupling)
        tasks = [(fam, i) for fam in cfg.families for i in range(cfg.circuits_for(n))]
        runs = _pmap(
            lambda t: benchmark_circuit(ds, t[0], t[1], cfg.depth, cfg.gamma_grid, cfg.seed), tasks, cfg.threads
        )
        fam_stats = []
        for fam in cfg.families:
            res = collect_benchmark(ds, fam, [r for t, r in zip(tasks, runs) if t[0] == fam])
            st = stats.get((fam, n))
            if st is None:
                raise ConfigError(f"no reservoir statistics for family {fam} at n = {n}")
            rows.append([fam, n, res.mse.size, res.mean, res.median, res.std, res.normalized_mean,
                         st["r_bar"], st["ck_norm_mean"], st["ck_norm_var"]])
            fam_stats.append((res.mean, st["r_bar"], st["ck_norm_mean"], st["ck_norm_var"]))
        arr = np.array(fam_stats)
        if len(cfg.families) >= 3:
            for j, name in ((1, "r_bar"), (2, "ck_norm_mean"), (3, "ck_norm_var")):
                rho, below = permutation_exceedance(arr[:, 0], arr[:, j], cfg.n_shuffles, rng)
                corr_rows.append([n, f"mse~{name}", rho, below, cfg.n_shuffles])
    cols = ["family", "n", "n_circuits", "mse_mean", "mse_median", "mse_std", "mse_normalized_mean",
            "r_bar", "ck_norm_mean", "ck_norm_var"]
    tables = {"E6": Table(cols, rows), "E6_correlations": Table(["n", "pair", "spearman", "null_below", "n_shuffles"], corr_rows)}
    if circuit_rows:
        tables["E6_circuits"] = Table(CIRCUIT_COLUMNS, circuit_rows)
    return ExperimentResult("E6", tables, {"e5_source": cfg.e5_csv or "recomputed"})


RUNNERS = {"E1": run_e1, "E2": run_e2, "E3": run_e3, "E4": run_e4, "E5": run_e5, "E6": run_e6}


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    with threadpool_limits(limits=1):
        return RUNNERS[cfg.experiment](cfg)


# ---------------------------------------------------------------- plotting


class PlotError(ValueError):
    pass


@dataclass(frozen=True)
class PlotSpec:
    """Columns to draw: ``x`` against each of ``y``; ``group`` splits rows into series,
    ``where`` keeps only rows with ``column = value``."""

    x: str
    y: tuple[str, ...]
    kind: str = "line"
    title: str = ""
    group: str | None = None
    where: tuple[tuple[str, str], ...] = ()
    xlog: bool = False
    ylog: bool = False
    out: str | None = None

    @classmethod
    def from_text(cls, text: str) -> PlotSpec:
        kw = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = (p.strip() for p in line.partition("="))
            if not sep:
                raise ConfigError(f"plot spec line {lineno}: expected 'key = value'")
            if key == "y":
                kw[key] = _strs(value)
            elif key == "where":
                pairs = []
                for cond in _strs(value):
                    col, eq, val = cond.partition(":")
                    if not eq:
                        raise ConfigError(f"plot spec line {lineno}: where takes column:value pairs")
                    pairs.append((col.strip(), val.strip()))
                kw[key] = tuple(pairs)
            elif key in ("xlog", "ylog"):
                kw[key] = _bool(value)
            elif key in ("x", "kind", "title", "group", "out"):
                kw[key] = value
            else:
                raise ConfigError(f"plot spec line {lineno}: unknown key {key!r}")
        if "x" not in kw or "y" not in kw:
            raise ConfigError("plot spec needs x and y")
        if kw.get("kind", "line") not in ("line", "scatter"):
            raise ConfigError("kind must be line or scatter")
        return cls(**kw)


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2", "#7f7f7f")
_W, _H, _L, _R, _T, _B = 640, 420, 70, 150, 40, 50


def _num(s: str) -> float | None:
    try:
        return float(s)
    except ValueError:
        return None


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    return [lo + (hi - lo) * i / (count - 1) for i in range(count)]


def emit_plot(csv_path, spec: PlotSpec, out_path=None) -> Path:
    """Render ``spec`` from the CSV at ``csv_path`` to a static SVG and return its path.

    Output bytes depend only on the CSV contents and the spec.
    """
    table = read_csv_table(csv_path)
    needed = [spec.x, *spec.y] + ([spec.group] if spec.group else []) + [c for c, _ in spec.where]
    missing = [c for c in needed if c not in table.columns]
    if missing:
        raise PlotError(f"{csv_path}: missing columns {missing}")
    col = {c: i for i, c in enumerate(table.columns)}
    rows = [r for r in table.rows if all(r[col[c]] == v for c, v in spec.where)]
    if not rows:
        raise PlotError(f"{csv_path}: no data rows to plot")

    xs_raw = [r[col[spec.x]] for r in rows]
    categorical = any(_num(v) is None for v in xs_raw)
    categories = list(dict.fromkeys(xs_raw)) if categorical else []

    def xval(v):
        return float(categories.index(v)) if categorical else float(v)

    series = []
    groups = list(dict.fromkeys(r[col[spec.group]] for r in rows)) if spec.group else [None]
    for ycol in spec.y:
        for g in groups:
            pts = []
            for r in rows:
                if g is not None and r[col[spec.group]] != g:
                    continue
                y = _num(r[col[ycol]])
                if y is None or not math.isfinite(y):
                    continue
                pts.append((xval(r[col[spec.x]]), y))
            label = ycol if g is None else (f"{g}" if len(spec.y) == 1 else f"{ycol} {g}")
            series.append((label, pts))

    def tx(v, log):
        return math.log10(v) if log else v

    allx = [tx(p[0], spec.xlog) for _, pts in series for p in pts if not spec.xlog or p[0] > 0]
    ally = [tx(p[1], spec.ylog) for _, pts in series for p in pts if not spec.ylog or p[1] > 0]
    if not allx or not ally:
        raise PlotError(f"{csv_path}: no finite values in the selected columns")
    x0, x1 = min(allx), max(allx)
    y0, y1 = min(ally), max(ally)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw, ph = _W - _L - _R, _H - _T - _B

    def px(v):
        return _L + (tx(v, spec.xlog) - x0) / (x1 - x0) * pw

    def py(v):
        return _T + ph - (tx(v, spec.ylog) - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
        f'<rect x="{_L}" y="{_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    if spec.title:
        out.append(f'<text x="{_W / 2:.1f}" y="24" text-anchor="middle" font-size="15">{_esc(spec.title)}</text>')
    for i, t in enumerate(_ticks(x0, x1)):
        xpix = _L + i * pw / 4
        label = categories[int(round(t))] if categorical and abs(t - round(t)) < 1e-9 else (
            "" if categorical else format(10**t if spec.xlog else t, ".3g"))
        out.append(f'<line x1="{xpix:.2f}" y1="{_T + ph}" x2="{xpix:.2f}" y2="{_T + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{xpix:.2f}" y="{_T + ph + 18}" text-anchor="middle" font-size="11">{_esc(label)}</text>')
    for i, t in enumerate(_ticks(y0, y1)):
        ypix = _T + ph - i * ph / 4
        label = format(10**t if spec.ylog else t, ".3g")
        out.append(f'<line x1="{_L - 5}" y1="{ypix:.2f}" x2="{_L}" y2="{ypix:.2f}" stroke="black"/>')
        out.append(f'<text x="{_L - 8}" y="{ypix + 4:.2f}" text-anchor="end" font-size="11">{label}</text>')
    out.append(f'<text x="{_L + pw / 2:.1f}" y="{_H - 10}" text-anchor="middle" font-size="13">{_esc(spec.x)}</text>')
    ylabel = _esc(", ".join(spec.y))
    out.append(
        f'<text x="16" y="{_T + ph / 2:.1f}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 16 {_T + ph / 2:.1f})">{ylabel}</text>'
    )
    for k, (label, pts) in enumerate(series):
        colour = _PALETTE[k % len(_PALETTE)]
        pts = [p for p in pts if (not spec.xlog or p[0] > 0) and (not spec.ylog or p[1] > 0)]
        coords = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in pts)
        if spec.kind == "line" and len(pts) > 1:
            out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{coords}"/>')
        for a, b in pts:
            out.append(f'<circle cx="{px(a):.2f}" cy="{py(b):.2f}" r="2.5" fill="{colour}"/>')
        ly = _T + 12 + 16 * k
        out.append(f'<line x1="{_W - _R + 12}" y1="{ly}" x2="{_W - _R + 32}" y2="{ly}" stroke="{colour}" stroke-width="2"/>')
        out.append(f'<text x="{_W - _R + 36}" y="{ly + 4}" font-size="11">{_esc(label)}</text>')
    out.append("</svg>")

    target = Path(out_path or spec.out or Path(csv_path).with_suffix(".svg"))
    with open(target, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(out) + "\n")
    return target


# ---------------------------------------------------------------- CLI


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="krylov-reservoir", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("experiment", choices=EXPERIMENTS)
    run.add_argument("--config", help="key = value config file")
    run.add_argument("--out", help="output directory")
    run.add_argument("--seed", type=int, help="master seed")
    run.add_argument("--threads", type=int, help="worker threads")
    run.add_argument("--full-scale", action="store_true", default=None, help="paper-size ensembles and grids")
    plot = sub.add_parser("plot", help="render a CSV column selection as SVG")
    plot.add_argument("--csv", required=True)
    plot.add_argument("--spec", required=True, help="key = value plot spec file")
    plot.add_argument("--out", help="SVG path (default: next to the CSV)")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "plot":
            try:
                spec = PlotSpec.from_text(Path(args.spec).read_text(encoding="utf-8"))
            except OSError as exc:
                raise ConfigError(f"cannot read plot spec: {exc}") from None
            print(emit_plot(args.csv, spec, args.out))
            return EXIT_OK
        cfg = load_config(
            args.config, args.experiment, out=args.out, seed=args.seed, threads=args.threads, full_scale=args.full_scale
        )
        result = run_experiment(cfg)
        for path in write_result(result, cfg):
            print(path)
        return EXIT_OK
    except (ConfigError, PlotError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (LinalgError, np.linalg.LinAlgError, FloatingPointError, ScramblingNotReached) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
