"""Crude Monte Carlo, classical stratified sampling and the DR-strat
likelihood-ratio estimator, plus the analytic variance that every optimizer
in the package minimizes or maximizes.

Outputs ``g`` are indicators ``1(Y(x) > l)``, so ``E[g^2 | x] = E[g | x]``; the
variance formula relies on this.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .discrete import Pmf, Stratification, check_same_grid, strata_probabilities
from .errors import (
    AllZeroProducts,
    EmptyBatch,
    EmptyStratum,
    GridMismatch,
    SupportViolation,
    ValidationError,
    ZeroBudgetStratum,
)

MIN_BUDGET = 1e-6


def check_means(means, n_points: int | None = None) -> np.ndarray:
    """Validate a conditional-mean table ``E[g(x_i)]`` (entries in [0, 1])."""
    m = np.asarray(means, dtype=float)
    if m.ndim != 1:
        raise ValidationError("conditional means must be a 1-D table")
    if n_points is not None and m.size != n_points:
        raise GridMismatch(f"{m.size} conditional means for {n_points} grid points")
    if np.any(m < 0) or np.any(m > 1) or not np.all(np.isfinite(m)):
        raise ValidationError("conditional means of an indicator must lie in [0, 1]")
    return m


@dataclass(frozen=True)
class SampleBatch:
    """Per-stratum sampled grid indices and the matching 0/1 simulator outputs."""

    indices: tuple
    outputs: tuple

    def __post_init__(self):
        idx = tuple(np.asarray(a, dtype=int) for a in self.indices)
        out = tuple(np.asarray(a, dtype=float) for a in self.outputs)
        if len(idx) != len(out) or any(a.shape != b.shape for a, b in zip(idx, out)):
            raise ValidationError("indices and outputs must align stratum by stratum")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "outputs", out)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([a.size for a in self.indices])

    def stratum_means(self) -> np.ndarray:
        if np.any(self.sizes == 0):
            raise EmptyStratum("every stratum needs at least one sample")
        return np.array([o.mean() for o in self.outputs])

    def to_rows(self, omega) -> list[dict]:
        """One row per stratum: ``k, n_k, omega_ref_k, mean``."""
        means = self.stratum_means()
        return [
            {"k": k, "n_k": int(n), "omega_ref_k": float(w), "mean": float(m)}
            for k, (n, w, m) in enumerate(zip(self.sizes, omega, means))
        ]


def true_mean(pmf: Pmf, means) -> float:
    """``E[g(X)] = sum_i p_i E[g(x_i)]``."""
    m = check_means(means, len(pmf))
    return float(pmf.mass @ m)


def crude_mc_estimate(samples) -> float:
    s = np.asarray(samples, dtype=float)
    if s.size == 0:
        raise EmptyBatch("no samples")
    return float(s.mean())


def stratified_estimate(batch: SampleBatch, omega) -> float:
    omega = np.asarray(omega, dtype=float)
    if omega.size != len(batch.indices):
        raise ValidationError("omega and batch disagree on the number of strata")
    return float(omega @ batch.stratum_means())


def stratum_output_std(pmf: Pmf, strat: Stratification, means) -> np.ndarray:
    """Std dev of the indicator output within each stratum under ``pmf``."""
    m = check_means(means, len(pmf))
    omega = strata_probabilities(pmf, strat)
    cond = np.bincount(strat.labels, weights=pmf.mass * m, minlength=strat.K) / omega
    return np.sqrt(np.clip(cond * (1.0 - cond), 0.0, None))


def classical_stratified_variance(n, omega, sigma) -> float:
    n = np.asarray(n, dtype=float)
    return float(np.sum(np.asarray(omega) ** 2 * np.asarray(sigma) ** 2 / n))


def neyman_allocation(omega, sigma, total: float) -> np.ndarray:
    """Continuous allocation ``n_k = N_T w_k s_k / sum(w s)``."""
    prod = np.asarray(omega, dtype=float) * np.asarray(sigma, dtype=float)
    if prod.sum() <= 0:
        raise AllZeroProducts("all omega_k * sigma_k are zero")
    return total * prod / prod.sum()


def likelihood_weights(eval_pmf: Pmf, ref_pmf: Pmf, strat: Stratification) -> np.ndarray:
    """Per-grid-point factor ``omega_ref,k(i) * p_m,i / p_ref,i``.

    A single sample at index ``i`` in stratum ``k`` contributes
    ``g * weight[i] / n_k`` to the DR-strat estimate.
    """
    check_same_grid(eval_pmf.grid, ref_pmf.grid)
    bad = (eval_pmf.mass > 0) & (ref_pmf.mass <= 0)
    if np.any(bad):
        raise SupportViolation(f"eval pmf has mass where reference has none (index {np.flatnonzero(bad)[0]})")
    omega_ref = strata_probabilities(ref_pmf, strat)
    ratio = np.divide(eval_pmf.mass, ref_pmf.mass, out=np.zeros(len(ref_pmf)), where=ref_pmf.mass > 0)
    return omega_ref[strat.labels] * ratio


def dr_strat_estimate(batch: SampleBatch, eval_pmf: Pmf, ref_pmf: Pmf, strat: Stratification) -> float:
    """Likelihood-ratio corrected stratified estimate of ``E[g(X_m)]``.

    Samples in ``batch`` must come from the conditional reference pmfs.
    """
    if len(batch.indices) != strat.K:
        raise ValidationError("batch and stratification disagree on the number of strata")
    if np.any(batch.sizes == 0):
        raise EmptyStratum("every stratum needs at least one sample")
    w = likelihood_weights(eval_pmf, ref_pmf, strat)
    return float(sum((o * w[i]).sum() / i.size for i, o in zip(batch.indices, batch.outputs)))


def dr_strat_variance(n, eval_pmf: Pmf, ref_pmf: Pmf, strat: Stratification, means) -> float:
    """Exact variance of :func:`dr_strat_estimate` for allocation ``n``.

    sum_k 1/n_k * [ omega_ref,k sum_{I_k} g_i p_i^2 / p_ref,i - (sum_{I_k} g_i p_i)^2 ]
    """
    n = np.asarray(n, dtype=float)
    if n.shape != (strat.K,):
        raise ValidationError(f"allocation has {n.size} entries, expected {strat.K}")
    if np.any(n < MIN_BUDGET):
        raise ZeroBudgetStratum(f"stratum budget below {MIN_BUDGET}: {n.min()!r}")
    g = check_means(means, len(ref_pmf))
    w = likelihood_weights(eval_pmf, ref_pmf, strat)
    p = eval_pmf.mass
    second = np.bincount(strat.labels, weights=g * p * w, minlength=strat.K)
    first = np.bincount(strat.labels, weights=g * p, minlength=strat.K)
    return float(np.sum(np.clip(second - first**2, 0.0, None) / n))


def max_variance(n, eval_pmfs: Sequence[Pmf], ref_pmf: Pmf, strat: Stratification, means) -> float:
    return max(dr_strat_variance(n, p, ref_pmf, strat, means) for p in eval_pmfs)


def sample_stratum(ref_pmf: Pmf, strat: Stratification, k: int, size, rng: np.random.Generator) -> np.ndarray:
    """Draw grid indices from the reference pmf conditioned on stratum ``k``
    by inverse-CDF lookup."""
    idx = strat.index_sets[k]
    cdf = np.cumsum(ref_pmf.mass[idx])
    if cdf[-1] <= 0:
        raise EmptyStratum(f"reference has no mass in stratum {k}")
    u = rng.random(size) * cdf[-1]
    local = np.minimum(np.searchsorted(cdf, u, side="right"), idx.size - 1)
    return idx[local]
