"""Outer minimization over allocation vectors.

A Gaussian-process surrogate of ``log v(n)`` (inputs ``n / N_T``) is refit
after every evaluation and the next allocation maximizes expected
improvement over the slab ``{sum n = N_T, n_k >= floor}``.  Every proposal is
rounded to integers before it is evaluated, so the trace only ever holds
allocations that could actually be run and the final answer needs no
separate rounding step.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import cho_solve, cholesky
from scipy.stats import norm

from .discrete import Pmf
from .errors import ConfigError, GPFitFailure, InfeasibleBudget, ValidationError
from .estimators import MIN_BUDGET
from .inner import DEFAULT_STARTS, MAX_ITER, InnerResult, nominal_max_variance, worst_case_variance

log = logging.getLogger(__name__)

LENGTHSCALES = (0.05, 0.1, 0.2, 0.5, 1.0)
NOISE_FRACTIONS = (1e-6, 1e-4, 1e-2)
NOISE_FLOOR = 1e-8
JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
EI_SIGMA_MIN = 1e-12
DEDUP_TOL = 1e-9


# --- Gaussian process --------------------------------------------------------


def _sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


@dataclass
class GPSurrogate:
    """Zero-mean GP on centred targets with a shared-lengthscale SE kernel."""

    inputs: np.ndarray
    values: np.ndarray
    lengthscale: float
    signal_var: float
    noise_var: float
    offset: float
    chol: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    jitter: float = 0.0

    def kernel(self, a, b) -> np.ndarray:
        return self.signal_var * np.exp(-0.5 * _sqdist(a, b) / self.lengthscale**2)

    def predict(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and standard deviation of the latent function at rows of ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        ks = self.kernel(x, self.inputs)
        mu = self.offset + ks @ self.alpha
        v = cho_solve((self.chol, True), ks.T)
        var = self.signal_var - np.einsum("ij,ji->i", ks, v)
        return mu, np.sqrt(np.clip(var, 0.0, None))

    def predict_grad(self, x: np.ndarray):
        """Mean, sd and their gradients at a single point ``x``."""
        ks = self.kernel(x[None, :], self.inputs)[0]
        diff = x[None, :] - self.inputs
        dks = -(diff / self.lengthscale**2) * ks[:, None]
        mu = self.offset + ks @ self.alpha
        dmu = dks.T @ self.alpha
        v = cho_solve((self.chol, True), ks)
        var = self.signal_var - ks @ v
        sd = math.sqrt(max(var, 0.0))
        dsd = -(dks.T @ v) / sd if sd > EI_SIGMA_MIN else np.zeros_like(x)
        return mu, sd, dmu, dsd


def _dedup(inputs: np.ndarray, values: np.ndarray):
    keep = []
    for i in range(len(inputs) - 1, -1, -1):
        if all(np.max(np.abs(inputs[i] - inputs[j])) > DEDUP_TOL for j in keep):
            keep.append(i)
    keep.sort()
    return inputs[keep], values[keep]


def _factor(kmat: np.ndarray, scale: float):
    for jit in JITTERS:
        try:
            return cholesky(kmat + jit * scale * np.eye(len(kmat)), lower=True), jit
        except np.linalg.LinAlgError:
            continue
    return None, None


def gp_fit(inputs, values) -> GPSurrogate:
    """Fit by maximizing the marginal likelihood over a fixed hyperparameter grid.

    Signal variance is the sample variance of the targets; the lengthscale and
    noise fraction are picked from :data:`LENGTHSCALES` x :data:`NOISE_FRACTIONS`.
    Near-duplicate inputs are merged, keeping the latest value.
    """
    x = np.atleast_2d(np.asarray(inputs, dtype=float))
    y = np.asarray(values, dtype=float)
    if len(x) != len(y):
        raise ValidationError("inputs and values differ in length")
    x, y = _dedup(x, y)
    if len(x) < 2:
        raise ValidationError("GP needs at least two distinct points")
    offset = float(y.mean())
    yc = y - offset
    s2 = max(float(yc.var()), 1e-12)
    d2 = _sqdist(x, x)

    best = None
    for ell in LENGTHSCALES:
        base = s2 * np.exp(-0.5 * d2 / ell**2)
        for frac in NOISE_FRACTIONS:
            noise = max(frac * s2, NOISE_FLOOR)
            chol, jit = _factor(base + noise * np.eye(len(x)), s2)
            if chol is None:
                continue
            alpha = cho_solve((chol, True), yc)
            nll = 0.5 * yc @ alpha + np.log(np.diag(chol)).sum()
            if best is None or nll < best[0] - 1e-12:
                best = (nll, ell, noise, chol, alpha, jit)
    if best is None:
        raise GPFitFailure("kernel matrix not positive definite after jitter escalation")
    _, ell, noise, chol, alpha, jit = best
    return GPSurrogate(x, y, ell, s2, noise, offset, chol, alpha, jit)


def _ei(best: float, mu, sd):
    mu = np.asarray(mu, dtype=float)
    sd = np.asarray(sd, dtype=float)
    out = np.zeros(np.broadcast(mu, sd).shape)
    pos = sd >= EI_SIGMA_MIN
    imp = best - mu
    out = np.where(pos, 0.0, np.maximum(imp, 0.0))
    z = np.divide(imp, sd, out=np.zeros_like(out), where=pos)
    return np.where(pos, imp * norm.cdf(z) + sd * norm.pdf(z), out)


def expected_improvement(gp: GPSurrogate, n_candidate, best_value: float):
    """EI for minimization: ``(best - mu) Phi(z) + sd phi(z)`` with ``z = (best - mu)/sd``.

    ``n_candidate`` is in GP input units (normalized allocation). When the
    posterior sd is below 1e-12 the improvement is deterministic, ``max(best - mu, 0)``.
    """
    mu, sd = gp.predict(n_candidate)
    out = _ei(best_value, mu, sd)
    return float(out[0]) if np.ndim(n_candidate) == 1 else out


def ei_closed_form(mu: float, sd: float, best: float) -> float:
    return float(_ei(best, mu, sd))


def _ei_and_grad(gp: GPSurrogate, x: np.ndarray, best: float):
    mu, sd, dmu, dsd = gp.predict_grad(x)
    if sd < EI_SIGMA_MIN:
        return max(best - mu, 0.0), (-dmu if best > mu else np.zeros_like(x))
    z = (best - mu) / sd
    cdf, pdf = norm.cdf(z), norm.pdf(z)
    return (best - mu) * cdf + sd * pdf, -cdf * dmu + pdf * dsd


# --- feasible region ---------------------------------------------------------


def _project_simplex(v: np.ndarray) -> np.ndarray:
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    rho = np.nonzero(u - css / np.arange(1, v.size + 1) > 0)[0][-1]
    return np.maximum(v - css[rho] / (rho + 1.0), 0.0)


@dataclass(frozen=True)
class Slab:
    """``{u : sum u = 1, u_k >= lo}`` in normalized allocation units."""

    K: int
    lo: float

    @property
    def free(self) -> float:
        return 1.0 - self.K * self.lo

    def project(self, u: np.ndarray) -> np.ndarray:
        return self.lo + self.free * _project_simplex((u - self.lo) / self.free)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.lo + self.free * rng.dirichlet(np.ones(self.K), size)


# --- configuration and reports -----------------------------------------------


@dataclass(frozen=True)
class BOConfig:
    n_initial: int | None = None
    n_iterations: int = 60
    floor: float = 1.0
    acq_restarts: int = 64
    acq_ascents: int = 5
    seed: int = 0
    inner_starts: int = DEFAULT_STARTS
    inner_max_iter: int = MAX_ITER
    threads: int = 1

    def initial_size(self, K: int) -> int:
        return self.n_initial if self.n_initial is not None else max(2 * K, 10)

    def validate(self, K: int, total: int) -> None:
        if self.n_initial is not None and self.n_initial < K + 1:
            raise ConfigError(f"n_initial must be at least K + 1 = {K + 1}")
        if self.floor < MIN_BUDGET:
            raise ConfigError("floor must be positive")
        if self.floor * K >= total:
            raise InfeasibleBudget(f"floor {self.floor} x {K} strata leaves no budget to search")
        if self.n_iterations < 0 or self.acq_restarts < 1 or self.inner_starts < 1:
            raise ConfigError("iteration and restart counts must be positive")

    @classmethod
    def from_json(cls, obj: dict) -> BOConfig:
        known = set(cls.__dataclass_fields__)
        bad = set(obj) - known
        if bad:
            raise ConfigError(f"unknown BO settings {sorted(bad)}")
        return cls(**obj)


@dataclass
class TraceRow:
    iteration: int
    phase: str
    allocation: np.ndarray
    value: float
    best_so_far: float
    wall_time: float


@dataclass
class SolveReport:
    method: str
    best_allocation: np.ndarray
    best_value: float
    trace: list
    worst_case_witnesses: list
    per_model_values: list
    argmax_model: int
    total: int

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "total_budget": self.total,
            "best_allocation": [int(v) for v in self.best_allocation],
            "best_value": self.best_value,
            "argmax_model": self.argmax_model,
            "per_model_values": [float(v) for v in self.per_model_values],
            "worst_case_pmfs": [p.mass.tolist() for p in self.worst_case_witnesses],
            "trace": [
                {
                    "iteration": r.iteration,
                    "phase": r.phase,
                    "allocation": [int(v) for v in r.allocation],
                    "value": r.value,
                    "best_so_far": r.best_so_far,
                }
                for r in self.trace
            ],
        }

    def allocation_csv(self, omega=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["stratum", "n_k", "share"] + (["omega_ref_k"] if omega is not None else []))
        for k, n in enumerate(self.best_allocation):
            row = [k, int(n), repr(float(n) / self.total)]
            if omega is not None:
                row.append(repr(float(omega[k])))
            w.writerow(row)
        return buf.getvalue()

    def trace_csv(self) -> str:
        """Trace rows without wall time (kept byte-stable across runs)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "phase", "allocation", "value", "best_so_far"])
        for r in self.trace:
            w.writerow([r.iteration, r.phase, " ".join(str(int(v)) for v in r.allocation),
                        repr(r.value), repr(r.best_so_far)])
        return buf.getvalue()

    def timing_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "wall_time"])
        for r in self.trace:
            w.writerow([r.iteration, f"{r.wall_time:.6f}"])
        return buf.getvalue()

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


# --- rounding ----------------------------------------------------------------


def round_allocation(n, total: int | None = None) -> np.ndarray:
    """Largest-remainder rounding with a minimum of one run per stratum.

    Each entry is floored (and raised to 1 if below); the leftover budget goes
    to the largest fractional parts, lower index first on ties.  If the floor
    of 1 overshoots the budget, the excess is taken from the largest entries.
    """
    n = np.asarray(n, dtype=float)
    total = int(round(n.sum())) if total is None else int(total)
    K = n.size
    if total < K:
        raise InfeasibleBudget(f"budget {total} < {K} strata")
    if np.any(n < 0) or not np.all(np.isfinite(n)):
        raise ValidationError("allocation must be finite and nonnegative")
    base = np.maximum(np.floor(n + 1e-9), 1).astype(int)
    frac = np.where(base > n, 0.0, n - base)
    left = total - base.sum()
    order = np.lexsort((np.arange(K), -frac))
    if left > 0:
        for j in range(left):
            base[order[j % K]] += 1
    while left < 0:
        # floor enforcement overshot: shave the largest entries (lower index on ties)
        k = int(np.lexsort((np.arange(K), -base))[0])
        base[k] -= 1
        left += 1
    return base


def _neighbours(n: np.ndarray):
    """Integer allocations one unit moved from stratum i to j."""
    K = n.size
    for i in range(K):
        if n[i] <= 1:
            continue
        for j in range(K):
            if i != j:
                m = n.copy()
                m[i] -= 1
                m[j] += 1
                yield m


# --- acquisition -------------------------------------------------------------


def propose_next(gp: GPSurrogate, slab: Slab, best: float, rng: np.random.Generator,
                 restarts: int = 64, ascents: int = 5, max_steps: int = 100):
    """Maximize EI over the slab (normalized units).

    ``restarts`` Dirichlet draws are scored, the best ``ascents`` of them are
    polished by projected gradient ascent, and the overall best point is
    returned together with the ranked raw candidates (used as fallbacks).
    """
    raw = slab.sample(rng, restarts)
    ei_raw = expected_improvement(gp, raw, best)
    order = np.argsort(-ei_raw, kind="stable")
    best_u, best_ei = raw[order[0]], float(ei_raw[order[0]])
    for s in order[:ascents]:
        u = raw[s]
        f, grad = _ei_and_grad(gp, u, best)
        step = 0.1 / max(np.linalg.norm(grad), 1e-12)
        for _ in range(max_steps):
            # the slab has diameter below 2, so longer moves only lose precision
            step = min(step, 2.0 / max(np.linalg.norm(grad), 1e-300))
            cand = slab.project(u + step * grad)
            fc, gc = _ei_and_grad(gp, cand, best)
            if fc > f:
                u, f, grad = cand, fc, gc
                step *= 1.5
            else:
                step *= 0.5
                if step * np.linalg.norm(grad) < 1e-12:
                    break
        if f > best_ei:
            best_u, best_ei = u, f
    return best_u, best_ei, raw[order]


# --- the BO loop -------------------------------------------------------------


class _Evaluator:
    """Caches v(n) on integer allocations and records the trace."""

    def __init__(self, fn: Callable[[np.ndarray], InnerResult]):
        self.fn = fn
        self.cache: dict[tuple, InnerResult] = {}
        self.trace: list[TraceRow] = []
        self.t0 = time.perf_counter()

    def seen(self, n) -> bool:
        return tuple(int(v) for v in n) in self.cache

    def __call__(self, n, phase: str) -> InnerResult:
        key = tuple(int(v) for v in n)
        res = self.cache.get(key)
        if res is None:
            res = self.fn(np.array(key, dtype=float))
            self.cache[key] = res
        best = min(self.trace[-1].best_so_far, res.value) if self.trace else res.value
        self.trace.append(TraceRow(len(self.trace), phase, np.array(key), res.value, best,
                                   time.perf_counter() - self.t0))
        return res

    def best(self):
        row = min(self.trace, key=lambda r: (r.value, r.iteration))
        return row.allocation, self.cache[tuple(int(v) for v in row.allocation)]


def per_model_neyman(problem, pmfs: Sequence[Pmf]) -> list[np.ndarray]:
    """Allocation minimizing each model's DR-strat variance on its own:
    ``n_k`` proportional to the square root of the per-stratum variance term."""
    from .estimators import likelihood_weights

    g = problem.means
    labels = problem.strat.labels
    out = []
    for p in pmfs:
        w = likelihood_weights(p, problem.reference, problem.strat)
        second = np.bincount(labels, weights=g * p.mass * w, minlength=problem.K)
        first = np.bincount(labels, weights=g * p.mass, minlength=problem.K)
        c = np.sqrt(np.clip(second - first**2, 0.0, None))
        if c.sum() <= 0:
            continue
        out.append(problem.total * c / c.sum())
    return out


def _initial_design(problem, cfg: BOConfig, rng, extra: Sequence[np.ndarray]) -> list[np.ndarray]:
    K, total = problem.K, problem.total
    slab = Slab(K, cfg.floor / total)
    pts = [round_allocation(np.full(K, total / K), total)]
    for e in extra:
        pts.append(round_allocation(np.maximum(np.asarray(e, dtype=float), cfg.floor), total))
    for n in per_model_neyman(problem, problem.nominals):
        pts.append(round_allocation(np.maximum(n, cfg.floor), total))
    want = cfg.initial_size(K)
    tries = 0
    while len({tuple(p) for p in pts}) < want and tries < 50 * want:
        pts.append(round_allocation(total * slab.sample(rng, 1)[0], total))
        tries += 1
    uniq, seen = [], set()
    for p in pts:
        if tuple(p) not in seen:
            seen.add(tuple(p))
            uniq.append(p)
    return uniq


def bayes_opt(problem, inner: Callable[[np.ndarray], InnerResult], cfg: BOConfig, method: str,
              extra_initial: Sequence[np.ndarray] = ()) -> SolveReport:
    """Minimize ``inner(n).value`` over integer allocations summing to ``N_T``."""
    K, total = problem.K, problem.total
    cfg.validate(K, total)
    ev = _Evaluator(inner)
    if K == 1:
        ev(np.array([total]), "forced")
        return _report(method, ev, total)

    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0xB0)))
    for n in _initial_design(problem, cfg, rng, extra_initial):
        ev(n, "initial")

    slab = Slab(K, cfg.floor / total)
    for it in range(cfg.n_iterations):
        x = np.array([r.allocation / total for r in ev.trace])
        y = np.log(np.maximum([r.value for r in ev.trace], 1e-300))
        gp = gp_fit(x, y)
        best_u, best_ei, ranked = propose_next(gp, slab, float(y.min()), rng, cfg.acq_restarts, cfg.acq_ascents)
        cand = _first_unseen(ev, [best_u, *ranked], total)
        phase = "bo"
        if cand is None:
            # proposals keep landing on evaluated integers: step to an unseen neighbour of the incumbent
            cand = next((m for m in _neighbours(ev.best()[0]) if not ev.seen(m)), None)
            phase = "neighbour"
        if cand is None:
            log.info("search space exhausted after %d iterations", it)
            break
        ev(cand, phase)
        log.debug("iter %d: %s -> %.6g (EI %.3g)", it, cand, ev.trace[-1].value, best_ei)
    return _report(method, ev, total)


def _first_unseen(ev: _Evaluator, us, total):
    for u in us:
        n = round_allocation(u * total, total)
        if not ev.seen(n):
            return n
    return None


def _report(method: str, ev: _Evaluator, total: int) -> SolveReport:
    alloc, res = ev.best()
    return SolveReport(method, alloc, res.value, ev.trace, list(res.per_model_pmfs),
                       list(res.per_model_values), res.argmax_model, total)


def dr_strat_objective(problem, sets, cfg: BOConfig, trace: bool = False):
    def v(n):
        return worst_case_variance(n, sets, problem.reference, problem.strat, problem.means,
                                   starts=cfg.inner_starts, seed=cfg.seed, max_iter=cfg.inner_max_iter,
                                   threads=cfg.threads, trace=trace)
    return v


def str_m_objective(problem, nominals: Sequence[Pmf] | None = None):
    noms = list(nominals if nominals is not None else problem.nominals)

    def v(n):
        return nominal_max_variance(n, noms, problem.reference, problem.strat, problem.means)
    return v


def solve_str_m(problem, nominals: Sequence[Pmf] | None = None, cfg: BOConfig | None = None) -> SolveReport:
    """Benchmark: minimize the largest variance over the nominal pmfs only."""
    cfg = cfg or BOConfig()
    return bayes_opt(problem, str_m_objective(problem, nominals), cfg, "Str-M")


def solve_dr_strat(problem, sets, cfg: BOConfig | None = None, *, str_m_allocation=None,
                   trace: bool = False) -> SolveReport:
    """Minimize the worst-case variance over the ambiguity sets.

    The Str-M allocation (solved here if not supplied) seeds the initial
    design, so the result is never worse than Str-M on this objective.
    """
    cfg = cfg or BOConfig()
    if str_m_allocation is None and problem.K > 1:
        str_m_allocation = solve_str_m(problem, [s.nominal for s in sets], cfg).best_allocation
    extra = [] if str_m_allocation is None else [np.asarray(str_m_allocation, dtype=float)]
    return bayes_opt(problem, dr_strat_objective(problem, sets, cfg, trace), cfg, "DR-Str", extra)
