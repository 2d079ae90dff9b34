"""Inner maximization: worst-case DR-strat variance over the ambiguity sets.

For a fixed allocation ``n`` the variance is a convex quadratic in the
evaluation pmf, so its maximum over a convex set sits on the boundary and the
problem is nonconvex as a maximization.  Finite parametric sets are solved
exactly by enumeration; the others by multi-start projected gradient ascent
with Armijo backtracking.  The ascent value is attained by a feasible pmf and
is therefore a lower bound on the true maximum.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ambiguity import AmbiguitySet
from .discrete import Pmf, Stratification, check_same_grid, strata_probabilities
from .errors import (
    GridTooLarge,
    InnerSolverFailure,
    NoStartConverged,
    NumericalError,
    SupportViolation,
    ValidationError,
    ZeroBudgetStratum,
)
from .estimators import MIN_BUDGET, check_means

log = logging.getLogger(__name__)

DEFAULT_STARTS = 16
ARMIJO_C = 1e-4
MAX_ITER = 2000
PG_TOL = 1e-6  # relative to the objective value
STALL_WINDOW = 25
STALL_GAIN = 1e-5


class VarianceObjective:
    """``p -> Var[DR-strat estimate]`` for fixed allocation, reference and means.

    Works on raw mass vectors (shape ``(|grid|,)``) so the ascent does not
    allocate a :class:`Pmf` per step.
    """

    def __init__(self, n, ref: Pmf, strat: Stratification, means):
        n = np.asarray(n, dtype=float)
        if n.shape != (strat.K,):
            raise ValidationError(f"allocation has {n.size} entries, expected {strat.K}")
        if np.any(n < MIN_BUDGET):
            raise ZeroBudgetStratum(f"stratum budget below {MIN_BUDGET}")
        if np.any(ref.mass <= 0):
            raise SupportViolation("reference pmf must be strictly positive on the grid")
        self.n = n
        self.ref = ref
        self.strat = strat
        self.g = check_means(means, len(ref))
        self.labels = strat.labels
        self.K = strat.K
        omega_ref = strata_probabilities(ref, strat)
        self._quad = self.g * omega_ref[self.labels] / ref.mass
        self._inv_n = (1.0 / n)[self.labels]

    def _first(self, p):
        return np.bincount(self.labels, weights=self.g * p, minlength=self.K)

    def value(self, p: np.ndarray) -> float:
        second = np.bincount(self.labels, weights=self._quad * p * p, minlength=self.K)
        first = self._first(p)
        return float(np.sum((second - first**2) / self.n))

    def gradient(self, p: np.ndarray) -> np.ndarray:
        first = self._first(p)
        return 2.0 * self._inv_n * (self._quad * p - self.g * first[self.labels])

    def rescaled(self, n) -> VarianceObjective:
        return VarianceObjective(n, self.ref, self.strat, self.g)


@dataclass
class AscentTrace:
    start: int
    value: float
    iterations: int
    reason: str

    @property
    def converged(self) -> bool:
        return self.reason != "max_iter"


@dataclass
class SetMaximum:
    value: float
    pmf: Pmf
    traces: list = field(default_factory=list)


@dataclass
class InnerResult:
    value: float
    argmax_model: int
    argmax_pmf: Pmf
    per_model_values: list
    per_model_pmfs: list
    diagnostics: list

    def to_json(self) -> dict:
        return {
            "value": self.value,
            "argmax_model": self.argmax_model,
            "per_model_values": list(self.per_model_values),
            "worst_case_pmfs": [p.mass.tolist() for p in self.per_model_pmfs],
        }


def _ascend(obj: VarianceObjective, aset: AmbiguitySet, p0: np.ndarray, max_iter: int, tol: float):
    """Projected gradient ascent from ``p0``, in the set's ascent coordinates.

    Returns ``(mass, value, iterations, reason)`` where reason is one of
    ``"pg"`` (projected-gradient norm below ``tol * value``), ``"stall"`` (relative gain
    under ``STALL_GAIN`` across ``STALL_WINDOW`` iterations) or ``"max_iter"``.
    """
    p = p0
    z = aset.to_coords(p)
    f = obj.value(p)
    history = [f]
    step = None
    for it in range(1, max_iter + 1):
        grad = aset.pull_gradient(obj.gradient(p))
        gnorm = np.linalg.norm(grad)
        if gnorm == 0.0:
            return p, f, it, "pg"
        if step is None:
            step = np.linalg.norm(z) / gnorm
        while True:
            q = aset.project_coords(z + step * grad)
            zq = aset.to_coords(q)
            fq = obj.value(q)
            if fq >= f + ARMIJO_C * grad @ (zq - z):
                break
            step *= 0.5
            if step * gnorm < 1e-16:
                return p, f, it, "pg"
        move = np.linalg.norm(zq - z)
        p, z, f = q, zq, fq
        history.append(f)
        if move / step <= tol * abs(f) or move < 1e-13:
            return p, f, it, "pg"
        if len(history) > STALL_WINDOW and f - history[-STALL_WINDOW - 1] <= STALL_GAIN * abs(f):
            return p, f, it, "stall"
        step *= 2.0
    return p, f, max_iter, "max_iter"


def maximize_over_set(
    n,
    aset: AmbiguitySet,
    ref: Pmf,
    strat: Stratification,
    means,
    *,
    starts: int = DEFAULT_STARTS,
    seed: int | Sequence[int] = 0,
    max_iter: int = MAX_ITER,
    tol: float = PG_TOL,
    objective: VarianceObjective | None = None,
) -> SetMaximum:
    """Maximize the DR-strat variance over one ambiguity set.

    Parametric sets: exact enumeration (ties go to the first theta).
    Other sets: ``starts`` ascents, the first from the nominal pmf and the rest
    from :meth:`AmbiguitySet.sample_member` draws seeded by ``seed``.
    """
    check_same_grid(aset.grid, ref.grid)
    obj = objective if objective is not None else VarianceObjective(n, ref, strat, means)
    if aset.parametric:
        vals = [obj.value(q.mass) for q in aset.members()]
        j = int(np.argmax(vals))
        return SetMaximum(vals[j], aset.members()[j], [AscentTrace(j, vals[j], 0, "enumerated")])

    ss = np.random.SeedSequence(seed)
    inits = [aset.nominal.mass]
    for child in ss.spawn(max(starts - 1, 0)):
        inits.append(aset.sample_member(child).mass)

    best_val, best_p, traces = -math.inf, None, []
    for s, p0 in enumerate(inits):
        try:
            p, val, iters, reason = _ascend(obj, aset, p0, max_iter, tol)
        except NumericalError as exc:
            log.debug("start %d failed: %s", s, exc)
            continue
        traces.append(AscentTrace(s, val, iters, reason))
        if val > best_val:
            best_val, best_p = val, p
    if best_p is None:
        raise NoStartConverged("every ascent start failed")
    return SetMaximum(best_val, Pmf(aset.grid, best_p), traces)


def worst_case_variance(
    n,
    sets: Sequence[AmbiguitySet],
    ref: Pmf,
    strat: Stratification,
    means,
    *,
    starts: int = DEFAULT_STARTS,
    seed: int = 0,
    max_iter: int = MAX_ITER,
    threads: int = 1,
    trace: bool = False,
) -> InnerResult:
    """v(n): the largest worst-case variance over all models.

    Each model gets its own seed stream ``(seed, m)`` so the result is a
    deterministic function of ``n`` and ``seed``; ties go to the lowest m.
    """
    obj = VarianceObjective(n, ref, strat, means)

    def solve(m):
        try:
            return maximize_over_set(
                n, sets[m], ref, strat, means,
                starts=starts, seed=(seed, m), max_iter=max_iter, objective=obj,
            )
        except NumericalError as exc:
            log.warning("inner solve for model %d failed: %s", m, exc)
            return exc

    if threads > 1 and len(sets) > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(solve, range(len(sets))))
    else:
        results = [solve(m) for m in range(len(sets))]

    ok = [r for r in results if isinstance(r, SetMaximum)]
    if not ok:
        raise InnerSolverFailure("inner maximization failed for every model")
    values = [r.value if isinstance(r, SetMaximum) else -math.inf for r in results]
    pmfs = [r.pmf if isinstance(r, SetMaximum) else None for r in results]
    m_star = int(np.argmax(values))
    diag = [
        [t.__dict__ for t in r.traces] if isinstance(r, SetMaximum) else {"error": str(r)}
        for r in results
    ]
    if trace:
        for m, d in enumerate(diag):
            log.info(json.dumps({"model": m, "n": list(map(float, n)), "starts": d}))
    return InnerResult(values[m_star], m_star, pmfs[m_star], values, pmfs, diag)


def nominal_max_variance(n, nominals: Sequence[Pmf], ref: Pmf, strat: Stratification, means) -> InnerResult:
    """Inner value when every set is just its nominal pmf (the Str-M objective)."""
    obj = VarianceObjective(n, ref, strat, means)
    values = [obj.value(p.mass) for p in nominals]
    m = int(np.argmax(values))
    return InnerResult(values[m], m, nominals[m], values, list(nominals), [])


def _compositions(n_points: int, total: int) -> np.ndarray:
    """All nonnegative integer vectors of length ``n_points`` summing to ``total``."""
    if n_points == 1:
        return np.array([[total]])
    bars = np.array(list(itertools.combinations(range(total + n_points - 1), n_points - 1)))
    edges = np.hstack([np.full((len(bars), 1), -1), bars, np.full((len(bars), 1), total + n_points - 1)])
    return np.diff(edges, axis=1) - 1


def simplex_lattice(n_points: int, resolution: int) -> np.ndarray:
    """All pmfs with masses in multiples of ``1/resolution`` (stars and bars)."""
    return _compositions(n_points, resolution) / resolution


def _lattice_chunks(n_points: int, resolution: int):
    """The simplex lattice, one chunk per value of the first mass."""
    if n_points == 1:
        yield np.ones((1, 1))
        return
    for first in range(resolution + 1):
        rest = _compositions(n_points - 1, resolution - first)
        yield np.hstack([np.full((len(rest), 1), first), rest]) / resolution


def brute_force_inner(n, aset: AmbiguitySet, ref: Pmf, strat: Stratification, means, resolution: int):
    """Exhaustive search over a simplex lattice intersected with the set (test oracle).

    The nominal pmf is always included as a candidate.  Grids above 6 points
    are refused.  The objective is evaluated directly from its sums over
    strata, independent of :class:`VarianceObjective`.
    """
    if len(ref) > 6:
        raise GridTooLarge(f"brute force limited to 6 grid points, got {len(ref)}")
    n = np.asarray(n, dtype=float)
    g = check_means(means, len(ref))
    member = np.eye(strat.K)[strat.labels]  # (points, K) stratum indicator
    omega_ref = ref.mass @ member

    def values(P):
        second = (P * P * (g * omega_ref[strat.labels] / ref.mass)) @ member
        first = (P * g) @ member
        return ((second - first**2) / n).sum(axis=1)

    best_val, best_p = float(values(aset.nominal.mass[None, :])[0]), aset.nominal.mass
    for chunk in _lattice_chunks(len(ref), resolution):
        cands = chunk[aset.contains_many(chunk, 0.0)]
        if len(cands):
            vals = values(cands)
            j = int(np.argmax(vals))
            if vals[j] > best_val:
                best_val, best_p = float(vals[j]), cands[j]
    return best_val, Pmf(aset.grid, best_p)
