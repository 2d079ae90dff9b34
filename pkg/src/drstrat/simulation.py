"""Stochastic simulators and Monte Carlo replication of the estimators.

Two simulators are shipped.  :class:`ToyNormal` draws ``Y ~ N(mu_Y(x), sigma_Y(x))``
with the closed-form mean and spread of the toy example; :class:`TableBernoulli`
draws the indicator directly from a table of exceedance probabilities and is
the synthetic stand-in for the wind-turbine simulator.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .discrete import Grid, Pmf
from .errors import ValidationError
from .estimators import check_means, dr_strat_variance, likelihood_weights, sample_stratum, true_mean

REPLICATION_CHUNK = 1000


def toy_conditional_mean(x, threshold: float):
    """``P(Y(x) > l) = 1 - Phi((l - mu_Y(x)) / sigma_Y(x))``."""
    from .problem import toy_mu, toy_sigma

    sd = toy_sigma(x)
    if np.any(sd <= 0):
        raise ValidationError("sigma_Y must be positive")
    return norm.sf((threshold - toy_mu(x)) / sd)


@dataclass(frozen=True)
class ToyNormal:
    threshold: float
    name = "toy"

    def check_grid(self, grid: Grid) -> None:
        from .problem import toy_sigma

        low = float(np.min(toy_sigma(grid.points)))
        if low <= 0:
            raise ValidationError(f"sigma_Y reaches {low} on the grid")

    def conditional_mean(self, x) -> np.ndarray:
        return toy_conditional_mean(x, self.threshold)

    def draw(self, x, rng: np.random.Generator) -> np.ndarray:
        from .problem import toy_mu, toy_sigma

        x = np.asarray(x, dtype=float)
        y = toy_mu(x) + toy_sigma(x) * rng.standard_normal(x.shape)
        return (y > self.threshold).astype(float)


@dataclass(frozen=True, eq=False)
class TableBernoulli:
    """Indicator output with ``P(g = 1 | x_i) = means[i]``."""

    grid: Grid
    means: np.ndarray
    name = "table"

    def __post_init__(self):
        object.__setattr__(self, "means", check_means(self.means, len(self.grid)))

    def check_grid(self, grid: Grid) -> None:
        if not self.grid.same_as(grid):
            raise ValidationError("table simulator defined on a different grid")

    def _index(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        pts = self.grid.points
        i = np.clip(np.searchsorted(pts, x), 1, len(pts) - 1)
        i = np.where(np.abs(pts[i - 1] - x) <= np.abs(pts[i] - x), i - 1, i)
        if np.any(np.abs(pts[i] - x) > 1e-9 * max(1.0, np.abs(pts).max())):
            raise ValidationError("input is not a grid point")
        return i

    def conditional_mean(self, x) -> np.ndarray:
        return self.means[self._index(x)]

    def draw(self, x, rng: np.random.Generator) -> np.ndarray:
        p = self.conditional_mean(x)
        return (rng.random(p.shape) < p).astype(float)


def simulate_output(spec, x, stream) -> np.ndarray:
    """0/1 outputs at inputs ``x`` (scalar or array) using ``stream``."""
    rng = np.random.default_rng(stream)
    return spec.draw(x, rng)


def pilot_estimate_cond_means(spec, grid: Grid, pilot_per_point: int, stream) -> np.ndarray:
    """Raw per-point empirical means from ``pilot_per_point`` runs at every grid point."""
    if pilot_per_point < 1:
        raise ValidationError("pilot_per_point must be >= 1")
    rng = np.random.default_rng(stream)
    x = np.repeat(grid.points, pilot_per_point)
    return spec.draw(x, rng).reshape(len(grid), pilot_per_point).mean(axis=1)


@dataclass
class ReplicationResult:
    replications: int
    mean: np.ndarray
    variance: np.ndarray
    std_error: np.ndarray
    true_mean: np.ndarray
    analytic_variance: np.ndarray
    simulator_calls: int
    labels: list = field(default_factory=list)

    def __post_init__(self):
        if self.replications < 2:
            raise ValidationError("need at least two replications")

    @property
    def relative_variance_error(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.analytic_variance > 0,
                            np.abs(self.variance - self.analytic_variance) / self.analytic_variance,
                            np.abs(self.variance))

    def rows(self) -> list[dict]:
        rel = self.relative_variance_error
        return [
            {
                "model": lab,
                "true_mean": float(self.true_mean[j]),
                "empirical_mean": float(self.mean[j]),
                "std_error": float(self.std_error[j]),
                "empirical_variance": float(self.variance[j]),
                "analytic_variance": float(self.analytic_variance[j]),
                "relative_error": float(rel[j]),
            }
            for j, lab in enumerate(self.labels)
        ]

    def to_csv(self) -> str:
        buf = io.StringIO()
        rows = self.rows()
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
        return buf.getvalue()

    def to_json(self) -> dict:
        return {"replications": self.replications, "simulator_calls": self.simulator_calls, "models": self.rows()}


def _chunk_estimates(problem, alloc, weights, simulator, seed, chunk_index, size):
    rng = np.random.default_rng(np.random.SeedSequence((seed, chunk_index)))
    x = problem.grid.points
    est = np.zeros((len(weights), size))
    for k, nk in enumerate(alloc):
        idx = sample_stratum(problem.reference, problem.strat, k, (size, nk), rng)
        out = simulator.draw(x[idx], rng)
        for j, w in enumerate(weights):
            est[j] += (out * w[idx]).mean(axis=1)
    return est


def replicate_experiment(
    problem,
    allocation,
    eval_pmfs: Sequence[Pmf],
    replications: int,
    seed: int = 0,
    *,
    simulator=None,
    threads: int = 1,
    labels: Sequence[str] | None = None,
) -> ReplicationResult:
    """Run ``replications`` independent sampling rounds and summarize the
    DR-strat estimate for every pmf in ``eval_pmfs``.

    Each round draws one batch of ``sum(allocation)`` simulator outputs from
    the conditional reference pmfs and reuses it for all eval pmfs.  Rounds
    are grouped in fixed-size chunks with their own seed, so results do not
    depend on ``threads``.
    """
    if replications < 2:
        raise ValidationError("need at least two replications")
    alloc = np.asarray(allocation)
    if alloc.shape != (problem.K,) or np.any(alloc != np.rint(alloc)) or np.any(alloc < 1):
        raise ValidationError("allocation must be K positive integers")
    alloc = alloc.astype(int)
    if simulator is None:
        simulator = TableBernoulli(problem.grid, problem.means)
    simulator.check_grid(problem.grid)
    weights = [likelihood_weights(p, problem.reference, problem.strat) for p in eval_pmfs]

    sizes = [REPLICATION_CHUNK] * (replications // REPLICATION_CHUNK)
    if replications % REPLICATION_CHUNK:
        sizes.append(replications % REPLICATION_CHUNK)

    def run(c):
        return _chunk_estimates(problem, alloc, weights, simulator, seed, c, sizes[c])

    if threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    else:
        parts = [run(c) for c in range(len(sizes))]
    est = np.concatenate(parts, axis=1)

    mean = est.mean(axis=1)
    var = est.var(axis=1, ddof=1)
    return ReplicationResult(
        replications,
        mean,
        var,
        np.sqrt(var / replications),
        np.array([true_mean(p, problem.means) for p in eval_pmfs]),
        np.array([dr_strat_variance(alloc, p, problem.reference, problem.strat, problem.means) for p in eval_pmfs]),
        int(alloc.sum()) * replications,
        list(labels) if labels is not None else [f"pmf{j}" for j in range(len(eval_pmfs))],
    )


def simulator_for(problem, preset: str | None = None):
    """Simulator matching a problem: the closed-form toy model or a Bernoulli table."""
    name = preset or problem.meta.get("simulator")
    if name == "toy":
        return ToyNormal(problem.threshold)
    return TableBernoulli(problem.grid, problem.means)
