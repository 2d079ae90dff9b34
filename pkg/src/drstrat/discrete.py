"""Discrete input models: grids, pmfs, strata and the parametric constructors
used by the presets (scaled binomial, discretized shifted Rayleigh)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import (
    GridMismatch,
    NonIntegerPreimage,
    NonPositiveDensityArgument,
    PmfNormalizationError,
    StratumZeroProbability,
    ValidationError,
)

RENORMALIZE_TOL = 1e-10
REJECT_TOL = 1e-6
NEGATIVE_TOL = 1e-12


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Grid:
    """Strictly increasing, finite support of a scalar input."""

    points: np.ndarray

    def __post_init__(self):
        pts = _frozen(self.points)
        if pts.ndim != 1 or pts.size < 2:
            raise ValidationError("grid needs at least two points")
        if not np.all(np.isfinite(pts)):
            raise ValidationError("grid points must be finite")
        if np.any(np.diff(pts) <= 0):
            raise ValidationError("grid points must be strictly increasing")
        object.__setattr__(self, "points", pts)

    @classmethod
    def uniform(cls, start: float, step: float, count: int) -> Grid:
        return cls(start + step * np.arange(count))

    @classmethod
    def scaled_integers(cls, first: int, last: int, shift: float, scale: float) -> Grid:
        """Points ``(i - shift) / scale`` for integers ``first..last``."""
        return cls((np.arange(first, last + 1) - shift) / scale)

    def __len__(self) -> int:
        return self.points.size

    @property
    def span(self) -> float:
        return float(self.points[-1] - self.points[0])

    def same_as(self, other: Grid) -> bool:
        return self is other or (
            len(self) == len(other) and np.array_equal(self.points, other.points)
        )

    def index_of(self, x: float, atol: float = 1e-9) -> int:
        i = int(np.argmin(np.abs(self.points - x)))
        if abs(self.points[i] - x) > atol:
            raise ValidationError(f"{x!r} is not a grid point")
        return i


def check_same_grid(*grids: Grid) -> None:
    first = grids[0]
    for g in grids[1:]:
        if not first.same_as(g):
            raise GridMismatch("pmfs/tables are defined on different grids")


@dataclass(frozen=True, eq=False)
class Pmf:
    """Probability masses over a :class:`Grid`.

    Masses that sum to one within ``REJECT_TOL`` are renormalized; anything
    further off is treated as a modelling bug and rejected.
    """

    grid: Grid
    mass: np.ndarray

    def __post_init__(self):
        m = np.array(self.mass, dtype=float)
        if m.shape != (len(self.grid),):
            raise GridMismatch(f"mass has shape {m.shape}, grid has {len(self.grid)} points")
        if not np.all(np.isfinite(m)):
            raise PmfNormalizationError("masses must be finite")
        if np.any(m < -NEGATIVE_TOL):
            raise PmfNormalizationError(f"negative mass {m.min():.3g}")
        m = np.clip(m, 0.0, None)
        total = m.sum()
        if abs(total - 1.0) > REJECT_TOL:
            raise PmfNormalizationError(f"masses sum to {total!r}")
        m = m / total
        object.__setattr__(self, "mass", _frozen(m))

    @classmethod
    def normalized(cls, grid: Grid, weights) -> Pmf:
        """Build a pmf from nonnegative, unnormalized weights."""
        w = np.asarray(weights, dtype=float)
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise PmfNormalizationError("weights must be finite and nonnegative")
        total = w.sum()
        if total <= 0:
            raise PmfNormalizationError("weights sum to zero")
        return cls(grid, w / total)

    @classmethod
    def uniform(cls, grid: Grid) -> Pmf:
        return cls(grid, np.full(len(grid), 1.0 / len(grid)))

    def __len__(self) -> int:
        return self.mass.size

    def mean(self) -> float:
        return float(self.mass @ self.grid.points)

    def variance(self) -> float:
        d = self.grid.points - self.mean()
        return float(self.mass @ d**2)

    def cdf(self) -> np.ndarray:
        return np.cumsum(self.mass)

    def allclose(self, other: Pmf, atol: float = 1e-10) -> bool:
        return self.grid.same_as(other.grid) and np.allclose(self.mass, other.mass, rtol=0, atol=atol)

    def to_json(self) -> dict:
        return {"grid": self.grid.points.tolist(), "mass": self.mass.tolist()}

    @classmethod
    def from_json(cls, obj: dict, grid: Grid | None = None) -> Pmf:
        g = grid if grid is not None else Grid(obj["grid"])
        if grid is not None and "grid" in obj:
            check_same_grid(grid, Grid(obj["grid"]))
        return cls(g, obj["mass"])


@dataclass(frozen=True, eq=False)
class Stratification:
    """Partition of grid indices into K nonempty strata (need not be contiguous)."""

    index_sets: tuple
    n_points: int

    def __post_init__(self):
        sets = tuple(np.array(sorted(int(i) for i in s), dtype=int) for s in self.index_sets)
        for s in sets:
            s.setflags(write=False)
        if not sets:
            raise ValidationError("need at least one stratum")
        if any(s.size == 0 for s in sets):
            raise ValidationError("strata must be nonempty")
        allidx = np.concatenate(sets)
        if allidx.size != self.n_points or not np.array_equal(np.sort(allidx), np.arange(self.n_points)):
            raise ValidationError("strata must partition the grid indices exactly once")
        labels = np.empty(self.n_points, dtype=int)
        for k, s in enumerate(sets):
            labels[s] = k
        labels.setflags(write=False)
        object.__setattr__(self, "index_sets", sets)
        object.__setattr__(self, "_labels", labels)

    @classmethod
    def equal_contiguous(cls, n_points: int, k: int) -> Stratification:
        """K contiguous blocks; sizes differ by at most one (larger blocks first)."""
        if not 1 <= k <= n_points:
            raise ValidationError(f"cannot split {n_points} points into {k} strata")
        return cls(tuple(np.array_split(np.arange(n_points), k)), n_points)

    @classmethod
    def from_sizes(cls, sizes: Sequence[int]) -> Stratification:
        edges = np.cumsum([0, *sizes])
        return cls(tuple(np.arange(a, b) for a, b in zip(edges[:-1], edges[1:])), int(edges[-1]))

    @property
    def K(self) -> int:
        return len(self.index_sets)

    @property
    def labels(self) -> np.ndarray:
        """Stratum label of every grid index."""
        return self._labels


def strata_probabilities(pmf: Pmf, strat: Stratification, *, strict: bool = True) -> np.ndarray:
    """omega_k = sum of masses in stratum k.

    With ``strict`` a stratum of zero mass raises :class:`StratumZeroProbability`.
    """
    if strat.n_points != len(pmf):
        raise GridMismatch("stratification does not match pmf length")
    omega = np.bincount(strat.labels, weights=pmf.mass, minlength=strat.K)
    if strict:
        bad = np.flatnonzero(omega <= 0)
        if bad.size:
            raise StratumZeroProbability(int(bad[0]), float(omega[bad[0]]))
    return omega


def conditional_pmf(pmf: Pmf, strat: Stratification, k: int) -> Pmf:
    """Pmf conditioned on stratum ``k``, over the sub-grid of that stratum."""
    idx = strat.index_sets[k]
    mass = pmf.mass[idx]
    omega = mass.sum()
    if omega <= 0:
        raise StratumZeroProbability(k, float(omega))
    sub = Grid(pmf.grid.points[idx]) if idx.size >= 2 else _SinglePoint(pmf.grid.points[idx])
    return Pmf(sub, mass / omega)


class _SinglePoint(Grid):
    # one-point strata are legal; their conditional pmf lives on a single point
    def __post_init__(self):
        pts = _frozen(self.points)
        object.__setattr__(self, "points", pts)


def reference_from_nominals(nominals: Sequence[Pmf]) -> Pmf:
    if not nominals:
        raise ValidationError("need at least one nominal pmf")
    check_same_grid(*(p.grid for p in nominals))
    return Pmf(nominals[0].grid, np.mean([p.mass for p in nominals], axis=0))


def scaled_binomial_pmf(grid: Grid, n_trials: int, p_success: float, shift: float, scale: float) -> Pmf:
    """Pmf of ``(B - shift) / scale`` with ``B ~ Bin(n_trials, p_success)``,
    truncated to the grid and renormalized."""
    if not 0 <= p_success <= 1:
        raise ValidationError("p_success must be in [0, 1]")
    pre = grid.points * scale + shift
    b = np.rint(pre)
    if np.any(np.abs(pre - b) > 1e-9 * np.maximum(1.0, np.abs(pre))):
        raise NonIntegerPreimage("grid points do not map to integer binomial outcomes")
    weights = stats.binom.pmf(b.astype(int), int(n_trials), p_success)
    return Pmf.normalized(grid, weights)


def discretized_rayleigh_pmf(grid: Grid, sigma: float, delta: float) -> Pmf:
    """Masses proportional to the Rayleigh(sigma) density evaluated at ``x - delta``."""
    if sigma <= 0:
        raise ValidationError("sigma must be positive")
    z = grid.points - delta
    if np.any(z <= 0):
        raise NonPositiveDensityArgument(f"x - delta <= 0 on the grid (delta={delta})")
    # log-space to survive wide grids
    logw = np.log(z) - 0.5 * (z / sigma) ** 2
    return Pmf.normalized(grid, np.exp(logw - logw.max()))
