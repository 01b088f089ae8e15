"""Level-statistics chaos indicators: spacing ratio, mean spacing, Heisenberg time.

Reference values of the mean spacing ratio: ``2 ln 2 - 1 ~ 0.386`` for
uncorrelated (Poisson) levels, ``~0.53`` for GOE/COE and ``~0.60`` for GUE/CUE.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DEGENERACY_TOL",
    "POISSON_R",
    "SpectralSummary",
    "TooFewLevels",
    "heisenberg_time",
    "mean_spacing",
    "r_statistic",
    "r_statistic_phases",
    "summarize",
]

DEGENERACY_TOL = 1e-12
POISSON_R = 2.0 * math.log(2.0) - 1.0


class TooFewLevels(ValueError):
    pass


def _ratios(spacings: np.ndarray) -> np.ndarray:
    s0, s1 = spacings[:-1], spacings[1:]
    return np.minimum(s0, s1) / np.maximum(s0, s1)


def _usable_spacings(spacings: np.ndarray, span: float, tol: float | None) -> np.ndarray:
    if tol is None:
        return spacings
    return spacings[spacings > tol * span]


def r_statistic(levels, degeneracy_tol: float | None = DEGENERACY_TOL) -> float:
    """Mean of ``min(s_i, s_{i+1}) / max(s_i, s_{i+1})`` over consecutive spacings.

    Spacings at or below ``degeneracy_tol * (max - min)`` are dropped first, so
    exact ties do not contribute zero ratios. Pass ``degeneracy_tol=None`` to keep
    them (pairs of zero spacings are then skipped as undefined).
    """
    e = np.sort(np.asarray(levels, dtype=float).ravel())
    if e.size < 3:
        raise TooFewLevels(f"need at least 3 levels, got {e.size}")
    s = _usable_spacings(np.diff(e), e[-1] - e[0], degeneracy_tol)
    return _mean_ratio(s)


def _mean_ratio(s: np.ndarray) -> float:
    if s.size < 2:
        raise TooFewLevels(f"need at least 3 distinct levels, got {s.size + 1}")
    s0, s1 = s[:-1], s[1:]
    hi = np.maximum(s0, s1)
    ok = hi > 0
    if not ok.any():
        raise TooFewLevels("all spacings vanish")
    return float(np.mean(np.minimum(s0, s1)[ok] / hi[ok]))


def r_statistic_phases(phases, degeneracy_tol: float | None = DEGENERACY_TOL) -> float:
    """Spacing ratio for eigenphases, treating them as points on the unit circle.

    The closing spacing ``2 pi - (max - min)`` is appended and ratios are taken
    cyclically, so every phase has two neighbours.
    """
    th = np.sort(np.mod(np.asarray(phases, dtype=float).ravel(), 2.0 * np.pi))
    if th.size < 3:
        raise TooFewLevels(f"need at least 3 phases, got {th.size}")
    s = np.append(np.diff(th), 2.0 * np.pi - (th[-1] - th[0]))
    s = _usable_spacings(s, 2.0 * np.pi, degeneracy_tol)
    if s.size < 3:
        raise TooFewLevels(f"need at least 3 distinct phases, got {s.size}")
    return _mean_ratio(np.append(s, s[0]))


def mean_spacing(levels, central_fraction: float = 0.8) -> float:
    """Mean nearest-neighbour spacing over the central part of the sorted spectrum."""
    e = np.sort(np.asarray(levels, dtype=float).ravel())
    if e.size < 2:
        raise TooFewLevels("need at least 2 levels")
    cut = int(math.floor(e.size * (1.0 - central_fraction) / 2.0))
    core = e[cut : e.size - cut]
    if core.size < 2:
        core = e
    spacing = float(np.mean(np.diff(core)))
    if not spacing > 0:
        raise TooFewLevels("spectrum is fully degenerate")
    return spacing


def heisenberg_time(levels, hbar: float = 1.0, central_fraction: float = 0.8) -> float:
    """``2 pi hbar / <spacing>``, the inverse mean level spacing in time units."""
    return 2.0 * math.pi * hbar / mean_spacing(levels, central_fraction)


@dataclass(frozen=True)
class SpectralSummary:
    levels: np.ndarray
    mean_spacing: float
    r_bar: float
    t_heisenberg: float


def summarize(levels, hbar: float = 1.0) -> SpectralSummary:
    e = np.sort(np.asarray(levels, dtype=float).ravel())
    return SpectralSummary(e, mean_spacing(e), r_statistic(e), heisenberg_time(e, hbar))
