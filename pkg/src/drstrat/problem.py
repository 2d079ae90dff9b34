"""Problem definition shared by the solvers, plus the two shipped presets.

A :class:`Problem` bundles everything that stays fixed while allocations are
searched: grid, strata, budget, nominal pmfs, reference pmf and the
conditional-mean table ``E[g(x_i)]``.  Ambiguity sets are built separately
(:func:`toy_sets`, :func:`windcase_sets`) because one problem is usually
solved against several set families.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ambiguity import (
    AmbiguitySet,
    BinomialSet,
    L2Set,
    MomentSet,
    RayleighShiftSet,
    Wasserstein1Set,
)
from .discrete import (
    Grid,
    Pmf,
    Stratification,
    check_same_grid,
    discretized_rayleigh_pmf,
    reference_from_nominals,
    scaled_binomial_pmf,
    strata_probabilities,
)
from .errors import ConfigError, InfeasibleBudget, SupportViolation, ValidationError
from .estimators import check_means

FAMILIES = ("l2", "wasserstein1", "parametric", "moment")


@dataclass(frozen=True, eq=False)
class Problem:
    grid: Grid
    strat: Stratification
    total: int
    nominals: tuple
    reference: Pmf
    means: np.ndarray
    threshold: float | None = None
    name: str = "custom"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.nominals:
            raise ValidationError("need at least one nominal pmf")
        object.__setattr__(self, "nominals", tuple(self.nominals))
        check_same_grid(self.grid, self.reference.grid, *(p.grid for p in self.nominals))
        if self.strat.n_points != len(self.grid):
            raise ValidationError("stratification does not cover the grid")
        if np.any(self.reference.mass <= 0):
            i = int(np.flatnonzero(self.reference.mass <= 0)[0])
            raise SupportViolation(f"reference pmf has zero mass at grid index {i}")
        if int(self.total) != self.total or self.total < self.strat.K:
            raise InfeasibleBudget(f"budget {self.total} cannot give each of {self.strat.K} strata one run")
        object.__setattr__(self, "total", int(self.total))
        m = check_means(self.means, len(self.grid)).copy()
        m.setflags(write=False)
        object.__setattr__(self, "means", m)

    @property
    def K(self) -> int:
        return self.strat.K

    @property
    def M(self) -> int:
        return len(self.nominals)

    @property
    def omega_ref(self) -> np.ndarray:
        return strata_probabilities(self.reference, self.strat)

    def with_means(self, means) -> Problem:
        return Problem(self.grid, self.strat, self.total, self.nominals, self.reference,
                       means, self.threshold, self.name, dict(self.meta))


# --- toy preset --------------------------------------------------------------

TOY_SHIFT = 40.0
TOY_SCALE = math.sqrt(20.0)
TOY_NOMINALS = ((75, 0.55), (85, 0.45))
TOY_THRESHOLD = 5.2


def toy_mu(x):
    x = np.asarray(x, dtype=float)
    return 0.95 * x**2 * (1 + 0.5 * np.cos(10 * x) + 0.5 * np.cos(20 * x))


def toy_sigma(x):
    x = np.asarray(x, dtype=float)
    return 1 + 0.7 * np.abs(x) + 0.4 * np.cos(x) + 0.3 * np.cos(14 * x)


def toy_grid() -> Grid:
    return Grid.scaled_integers(23, 57, TOY_SHIFT, TOY_SCALE)


def toy_binomial_theta_grid(n_trials: int, p_success: float) -> list:
    """Invented 5 x 3 neighbourhood of a nominal (N, p); used when config omits theta_grid."""
    return [(n_trials + dn, round(p_success + dp, 6)) for dp in (0.0, -0.025, 0.025, -0.05, 0.05)
            for dn in (0, -5, 5)]


def toy_problem(threshold: float = TOY_THRESHOLD) -> Problem:
    from .simulation import toy_conditional_mean

    grid = toy_grid()
    noms = tuple(scaled_binomial_pmf(grid, n, p, TOY_SHIFT, TOY_SCALE) for n, p in TOY_NOMINALS)
    return Problem(
        grid,
        Stratification.equal_contiguous(len(grid), 7),
        100,
        noms,
        reference_from_nominals(noms),
        toy_conditional_mean(grid.points, threshold),
        threshold,
        "toy",
        {"simulator": "toy"},
    )


def toy_sets(problem: Problem, family: str, **params) -> list[AmbiguitySet]:
    """One ambiguity set per toy nominal, centred on it, for ``family``."""
    if family == "parametric":
        return [
            BinomialSet(problem.grid, TOY_SHIFT, TOY_SCALE,
                        params.get("theta_grid", toy_binomial_theta_grid(n, p)), (n, p))
            for n, p in TOY_NOMINALS
        ]
    return [_discrepancy_or_moment(p, family, params) for p in problem.nominals]


# --- wind-turbine preset (synthetic conditional means) -----------------------

WIND_NOMINALS = ((9.0 * math.sqrt(2 / math.pi), 1.5), (11.0 * math.sqrt(2 / math.pi), -0.5))
WIND_THRESHOLD = 3.15
WIND_SIGMOID = (20.0, 1.5)


def wind_grid() -> Grid:
    return Grid.uniform(3.0, 0.1, 220)


def windcase_synthetic_means(x, center: float = WIND_SIGMOID[0], width: float = WIND_SIGMOID[1]) -> np.ndarray:
    """Synthetic exceedance probability: logistic in wind speed, ~0 below 12 m/s.

    Stands in for the aeroelastic simulator, which is not available here.
    """
    x = np.asarray(x, dtype=float)
    return 0.5 * (1.0 + np.tanh((x - center) / (2.0 * width)))


def rayleigh_theta_grid(sigma: float, delta: float) -> list:
    """Invented 3 x 3 neighbourhood: sigma scaled by 0.95/1/1.05, delta moved by -0.5/0/0.5."""
    return [(sigma * fs, delta + dd) for dd in (0.0, -0.5, 0.5) for fs in (1.0, 0.95, 1.05)]


def windcase_problem() -> Problem:
    grid = wind_grid()
    noms = tuple(discretized_rayleigh_pmf(grid, s, d) for s, d in WIND_NOMINALS)
    return Problem(
        grid,
        Stratification.equal_contiguous(len(grid), 22),
        1000,
        noms,
        reference_from_nominals(noms),
        windcase_synthetic_means(grid.points),
        WIND_THRESHOLD,
        "windcase-synthetic",
        {"simulator": "windcase-synthetic", "synthetic": True},
    )


def windcase_sets(problem: Problem, family: str, **params) -> list[AmbiguitySet]:
    if family == "parametric":
        return [
            RayleighShiftSet(problem.grid, params.get("theta_grid", rayleigh_theta_grid(s, d)), (s, d))
            for s, d in WIND_NOMINALS
        ]
    return [_discrepancy_or_moment(p, family, params) for p in problem.nominals]


def _discrepancy_or_moment(nominal: Pmf, family: str, params: dict) -> AmbiguitySet:
    if family == "l2":
        return L2Set(nominal, **params)
    if family == "wasserstein1":
        return Wasserstein1Set(nominal, **params)
    if family == "moment":
        return MomentSet(nominal, **params)
    raise ConfigError(f"unknown set family {family!r}; expected one of {FAMILIES}")


PRESETS = {"toy": (toy_problem, toy_sets), "windcase-synthetic": (windcase_problem, windcase_sets)}
