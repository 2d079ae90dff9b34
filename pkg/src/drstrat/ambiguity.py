"""Ambiguity sets over pmfs on a fixed 1-D grid.

Five concrete families:

* :class:`L2Set` -- Euclidean ball around the nominal pmf.
* :class:`Wasserstein1Set` -- 1-Wasserstein ball, using the cumulative 1-D formula.
* :class:`BinomialSet` / :class:`RayleighShiftSet` -- finite slices of a
  parametric family (one pmf per entry of ``theta_grid``).
* :class:`MomentSet` -- mean and second-moment bounds relative to the nominal.

All sets are convex (or finite), contain a known feasible anchor, and support
``contains``, ``project`` and ``sample_member``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import isotonic_regression, linprog

from . import _kernels
from .discrete import (
    Grid,
    Pmf,
    check_same_grid,
    discretized_rayleigh_pmf,
    scaled_binomial_pmf,
)
from .errors import (
    ConfigError,
    NonPositiveDensityArgument,
    ProjectionDidNotConverge,
    ValidationError,
)

DEFAULT_L2_GAMMA = 0.05
DEFAULT_MOMENT = (0.01, 0.9, 1.1)
MAX_SWEEPS = 500
SWEEP_TOL = 1e-10
PROJECTION_TOL = 1e-13  # on the unit-scaled moment functionals
MOMENT_FEAS_TOL = 1e-10  # relative to the nominal variance; well above PROJECTION_TOL


def default_w1_gamma(grid: Grid) -> float:
    return 0.1 * grid.span / len(grid)


# ---------------------------------------------------------------------------
# distances and elementary projections


def l2_distance(p: Pmf, q: Pmf) -> float:
    check_same_grid(p.grid, q.grid)
    return float(np.linalg.norm(p.mass - q.mass))


def _w1(p: np.ndarray, q: np.ndarray, gaps: np.ndarray):
    return np.abs(np.cumsum(p - q, axis=-1)[..., :-1]) @ gaps


def wasserstein1_distance_1d(p: Pmf, q: Pmf) -> float:
    """sum_i |CDF_p(i) - CDF_q(i)| (x_{i+1} - x_i)."""
    check_same_grid(p.grid, q.grid)
    return float(_w1(p.mass, q.mass, np.diff(p.grid.points)))


def transport_cost(p: Pmf, q: Pmf, power: float = 1.0) -> float:
    """Optimal transport cost ``min sum_ij |x_i - x_j|^power q_ij`` by linear programming.

    Dense LP with |grid|^2 variables; intended for small grids only.
    """
    check_same_grid(p.grid, q.grid)
    x = p.grid.points
    n = x.size
    cost = np.abs(x[:, None] - x[None, :]) ** power
    rows = np.kron(np.eye(n), np.ones(n))
    cols = np.kron(np.ones(n), np.eye(n))
    res = linprog(
        cost.ravel(),
        A_eq=np.vstack([rows, cols]),
        b_eq=np.concatenate([p.mass, q.mass]),
        bounds=(0, None),
        method="highs",
    )
    if res.status != 0:
        raise ValidationError(f"transport LP failed: {res.message}")
    return float(res.fun)


def in_wasserstein_ball_lp(p: Pmf, nominal: Pmf, gamma: float, power: float = 1.0, tol: float = 1e-9) -> bool:
    """Membership in the p-Wasserstein ball through the transport-plan formulation."""
    return transport_cost(p, nominal, power) <= gamma**power + tol


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, v.size + 1)
    rho = np.count_nonzero(u - css / ind > 0)
    theta = css[rho - 1] / rho
    return np.maximum(v - theta, 0.0)


def _project_weighted_l1_ball(v: np.ndarray, center: np.ndarray, weights: np.ndarray, radius: float) -> np.ndarray:
    """argmin ||w - v|| s.t. sum weights*|w - center| <= radius (weights > 0)."""
    d = v - center
    a = np.abs(d)
    if a @ weights <= radius:
        return v.copy()
    if radius <= 0:
        return center.copy()
    # soft threshold |d_j| - tau*weights_j; breakpoints at a_j / weights_j
    bp = a / weights
    order = np.argsort(bp)[::-1]
    wa = (weights * a)[order]
    w2 = (weights**2)[order]
    cwa = np.cumsum(wa)
    cw2 = np.cumsum(w2)
    taus = (cwa - radius) / cw2
    # active set is the first j entries where tau stays below the j-th breakpoint
    valid = taus < bp[order]
    valid[0] = True  # holds exactly; guards against rounding at tiny radius
    j = np.flatnonzero(valid)[-1]
    tau = max(taus[j], 0.0)
    return center + np.sign(d) * np.maximum(a - tau * weights, 0.0)


def _project_cdf_box(z: np.ndarray) -> np.ndarray:
    """Projection onto {0 <= z_1 <= ... <= z_n <= 1}: isotonic fit then clip."""
    return np.clip(isotonic_regression(z).x, 0.0, 1.0)


def _cdf_to_pmf(z: np.ndarray) -> np.ndarray:
    return np.diff(np.concatenate([[0.0], z, [1.0]]))


def _dykstra(x0: np.ndarray, projections, max_sweeps: int = MAX_SWEEPS, tol: float = SWEEP_TOL):
    """Dykstra's alternating projections; returns the iterate after each set
    and whether the sweep movement fell below ``tol``."""
    x = x0.copy()
    incr = [np.zeros_like(x0) for _ in projections]
    iterates = [x0] * len(projections)
    for _ in range(max_sweeps):
        prev = x
        for j, proj in enumerate(projections):
            y = proj(x + incr[j])
            incr[j] = x + incr[j] - y
            x = y
            iterates[j] = y
        if np.linalg.norm(x - prev) < tol:
            return iterates, True
    return iterates, False


# ---------------------------------------------------------------------------
# sets


@dataclass(frozen=True, eq=False)
class AmbiguitySet:
    """Common interface.  Subclasses define ``nominal`` and the constraint checks."""

    kind = "abstract"
    parametric = False

    @property
    def grid(self) -> Grid:
        return self.nominal.grid

    def _check(self, p: Pmf) -> None:
        check_same_grid(self.grid, p.grid)

    def contains(self, p: Pmf, tol: float = 1e-8) -> bool:
        raise NotImplementedError

    def anchor(self) -> np.ndarray:
        """A point known to be feasible, used for radial retraction."""
        return self.nominal.mass

    def project(self, p) -> Pmf:
        raise NotImplementedError

    # Projected gradient ascent runs in coordinates where ``project_coords``
    # is a Euclidean projection.  Pmf coordinates unless a subclass says
    # otherwise; the map to the pmf must be affine.

    def to_coords(self, m: np.ndarray) -> np.ndarray:
        return m

    def pull_gradient(self, grad: np.ndarray) -> np.ndarray:
        """Gradient in ascent coordinates from the gradient in pmf coordinates."""
        return grad

    def project_coords(self, z: np.ndarray) -> np.ndarray:
        """Project ``z`` (ascent coordinates); returns the member's pmf mass."""
        return self.project(z).mass

    def sample_member(self, seed=None) -> Pmf:
        rng = np.random.default_rng(seed)
        c = self.nominal.mass
        u = rng.standard_normal(c.size)
        u -= u.mean()
        u /= np.linalg.norm(u)
        step = rng.uniform(0.0, 1.0) * self._perturbation_scale(u)
        try:
            return self.project(project_simplex(c + step * u))
        except ProjectionDidNotConverge:
            return self.nominal

    def _perturbation_scale(self, direction: np.ndarray) -> float:
        return float(np.linalg.norm(self.nominal.mass))

    def _retract(self, y: np.ndarray) -> np.ndarray:
        """Largest step from the anchor toward simplex point ``y`` that stays feasible."""
        c = self.anchor()
        if self._feasible(y):
            return y
        if not self._feasible(c):
            raise ProjectionDidNotConverge("anchor point is not feasible")
        lo, hi = 0.0, 1.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if self._feasible(c + mid * (y - c)):
                lo = mid
            else:
                hi = mid
            if hi - lo < 1e-15:
                break
        return c + lo * (y - c)

    def _feasible(self, m: np.ndarray) -> bool:
        return bool(self._contains_mass(m, 0.0))

    def _contains_mass(self, m: np.ndarray, tol: float) -> bool:
        raise NotImplementedError

    def contains_many(self, masses: np.ndarray, tol: float = 1e-8) -> np.ndarray:
        """Vectorized membership for rows of ``masses`` (assumed on the simplex)."""
        return np.asarray(self._contains_mass(np.atleast_2d(masses), tol), dtype=bool)

    def _as_mass(self, p) -> np.ndarray:
        if isinstance(p, Pmf):
            self._check(p)
            return p.mass
        m = np.asarray(p, dtype=float)
        if m.shape != (len(self.grid),):
            raise ValidationError("vector length does not match the grid")
        return m

    def to_json(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class L2Set(AmbiguitySet):
    nominal: Pmf
    gamma: float = DEFAULT_L2_GAMMA
    kind = "l2"

    def __post_init__(self):
        if self.gamma < 0:
            raise ValidationError("gamma must be nonnegative")

    def _contains_mass(self, m, tol):
        return np.linalg.norm(m - self.nominal.mass, axis=-1) <= self.gamma + tol

    def contains(self, p: Pmf, tol: float = 1e-8) -> bool:
        self._check(p)
        return bool(self._contains_mass(p.mass, tol))

    def project(self, p) -> Pmf:
        """Exact Euclidean projection onto ball ∩ simplex.

        The minimizer is ``P_simplex(c + t (p - c))`` for the largest ``t`` in
        [0, 1] whose image stays in the ball; ``t`` is found by bisection.
        """
        v = self._as_mass(p)
        c = self.nominal.mass
        y = project_simplex(v)
        if np.linalg.norm(y - c) <= self.gamma:
            return Pmf(self.grid, y)
        lo, hi = 0.0, 1.0
        best = c
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            cand = project_simplex(c + mid * (v - c))
            if np.linalg.norm(cand - c) <= self.gamma:
                lo, best = mid, cand
            else:
                hi = mid
            if hi - lo < 1e-16:
                break
        return Pmf(self.grid, best)

    def _perturbation_scale(self, direction):
        return 2.0 * self.gamma

    def to_json(self):
        return {"type": "l2", "gamma": self.gamma}


@dataclass(frozen=True, eq=False)
class Wasserstein1Set(AmbiguitySet):
    nominal: Pmf
    gamma: float | None = None
    kind = "wasserstein1"

    def __post_init__(self):
        if self.gamma is None:
            object.__setattr__(self, "gamma", default_w1_gamma(self.nominal.grid))
        if self.gamma < 0:
            raise ValidationError("gamma must be nonnegative")

    @property
    def gaps(self) -> np.ndarray:
        return np.diff(self.grid.points)

    def _contains_mass(self, m, tol):
        return _w1(m, self.nominal.mass, self.gaps) <= self.gamma + tol

    def contains(self, p: Pmf, tol: float = 1e-8) -> bool:
        self._check(p)
        return bool(self._contains_mass(p.mass, tol))

    def project(self, p) -> Pmf:
        """Alternating projections in CDF coordinates.

        On the first |grid|-1 cumulative sums, the simplex becomes a bounded
        monotone cone and the ball a weighted L1 ball; both have exact
        projections, so Dykstra converges to the projection in CDF metric.
        """
        v = self._as_mass(p)
        y = project_simplex(v)
        if self._feasible(y):
            return Pmf(self.grid, y)
        return Pmf(self.grid, self.project_coords(self.to_coords(y)))

    # ascent runs on the first |grid|-1 cumulative sums

    def to_coords(self, m):
        return np.cumsum(m)[:-1]

    def pull_gradient(self, grad):
        return grad[:-1] - grad[1:]

    def project_coords(self, z):
        zc = np.cumsum(self.nominal.mass)[:-1]
        gaps = self.gaps
        iterates, _ = _dykstra(
            np.asarray(z, dtype=float),
            [_project_cdf_box, lambda u: _project_weighted_l1_ball(u, zc, gaps, self.gamma)],
        )
        m = np.clip(_cdf_to_pmf(iterates[0]), 0.0, None)
        m /= m.sum()
        return self._retract(m)

    def _perturbation_scale(self, direction):
        cost = _w1(direction, np.zeros_like(direction), self.gaps)
        return 2.0 * self.gamma / max(cost, 1e-300)

    def to_json(self):
        return {"type": "wasserstein1", "gamma": self.gamma}


@dataclass(frozen=True, eq=False)
class MomentSummary:
    mean: float
    variance: float  # second central moment about the nominal mean


def moment_summary(p: Pmf, mu_bar: float) -> MomentSummary:
    return MomentSummary(p.mean(), float(p.mass @ (p.grid.points - mu_bar) ** 2))


@dataclass(frozen=True, eq=False)
class MomentSet(AmbiguitySet):
    """Pmfs whose mean stays near the nominal mean and whose second moment
    about that mean stays within ``[gamma2_lb, gamma2_ub]`` times the nominal
    variance, with the lower bound tightened by twice the squared mean shift.
    """

    nominal: Pmf
    gamma1: float = DEFAULT_MOMENT[0]
    gamma2_lb: float = DEFAULT_MOMENT[1]
    gamma2_ub: float = DEFAULT_MOMENT[2]
    mu_bar: float | None = None
    sigma_bar: float | None = None
    kind = "moment"

    def __post_init__(self):
        if self.mu_bar is None:
            object.__setattr__(self, "mu_bar", self.nominal.mean())
        if self.sigma_bar is None:
            object.__setattr__(self, "sigma_bar", self.nominal.variance())
        if self.sigma_bar <= 0:
            raise ValidationError("nominal variance must be positive")
        if self.gamma1 < 0 or self.gamma2_lb <= 0 or self.gamma2_ub < self.gamma2_lb:
            raise ValidationError("need gamma1 >= 0 and 0 < gamma2_lb <= gamma2_ub")
        # linear functionals for the mean and the second moment about mu_bar
        object.__setattr__(self, "_a", self.grid.points)
        object.__setattr__(self, "_b", (self.grid.points - self.mu_bar) ** 2)
        object.__setattr__(self, "_anchor", self._find_anchor())


    def _slacks(self, m: np.ndarray):
        shift = m @ self._a - self.mu_bar
        second = m @ self._b
        return (
            self.gamma1 - shift**2 / self.sigma_bar,
            self.gamma2_ub * self.sigma_bar - second,
            second - self.gamma2_lb * self.sigma_bar - 2.0 * shift**2,
        )

    def _contains_mass(self, m, tol):
        # relative to the variance scale so the tolerance is unit-free
        s1, s2, s3 = self._slacks(m)
        return (s1 >= -tol) & (s2 >= -tol * self.sigma_bar) & (s3 >= -tol * self.sigma_bar)

    def contains(self, p: Pmf, tol: float = 1e-8) -> bool:
        self._check(p)
        return bool(self._contains_mass(p.mass, tol))

    def _feasible(self, m: np.ndarray) -> bool:
        # degenerate sets (gamma1 = 0 or gamma2_lb = gamma2_ub) pin a moment
        # exactly, which floating point can only meet to rounding
        return bool(self._contains_mass(m, MOMENT_FEAS_TOL))

    def _find_anchor(self) -> np.ndarray:
        c = self.nominal.mass
        if self._feasible(c):
            return c
        # nominal excluded (e.g. gamma2_lb > 1): mix nominal with the pmf that
        # maximizes spread at the right mean, found by LP on the linear parts
        a, b = self._a, self._b
        r = math.sqrt(self.gamma1 * self.sigma_bar)
        res = linprog(
            -b,
            A_ub=np.vstack([a, -a]),
            b_ub=[self.mu_bar + r * 0.5, -(self.mu_bar - r * 0.5)],
            A_eq=np.ones((1, a.size)),
            b_eq=[1.0],
            bounds=(0, None),
            method="highs",
        )
        if res.status == 0:
            far = np.clip(res.x, 0, None)
            far /= far.sum()
            for t in np.linspace(0, 1, 201):
                m = (1 - t) * c + t * far
                if self._feasible(m):
                    return m
        raise ValidationError("moment ambiguity set appears to be empty")

    def anchor(self) -> np.ndarray:
        return self._anchor

    def _scaled(self):
        """Centered, unit-scaled functionals and the image region's parameters."""
        a = self._a - self.mu_bar
        sa = float(np.max(np.abs(a))) or 1.0
        sb = float(np.max(self._b)) or 1.0
        return (a / sa, self._b / sb, math.sqrt(self.gamma1 * self.sigma_bar) / sa,
                self.gamma2_ub * self.sigma_bar / sb, self.gamma2_lb * self.sigma_bar / sb,
                2.0 * sa * sa / sb)

    def project(self, p) -> Pmf:
        """Euclidean projection, exact up to a final radial retraction.

        The set only constrains the mean shift and the second moment, so the
        projection has a two-dimensional dual; each candidate active piece
        (an edge or a corner of the feasible (shift, moment) region) is solved
        by Newton's method on that dual.  Dykstra's method is the fallback.
        """
        v = self._as_mass(p)
        y = project_simplex(v)
        if self._feasible(y):
            return Pmf(self.grid, y)
        a, b, r, U, L, kappa = self._scaled()
        y, ok = _kernels.moment_project(v, a, b, r, U, L, kappa, PROJECTION_TOL)
        if not ok:
            y, _ = _kernels.moment_dykstra(y, self._a, self._b, self.mu_bar,
                                           math.sqrt(self.gamma1 * self.sigma_bar),
                                           self.gamma2_ub * self.sigma_bar,
                                           self.gamma2_lb * self.sigma_bar, MAX_SWEEPS, SWEEP_TOL)
        return Pmf(self.grid, self._retract(y))

    def _perturbation_scale(self, direction):
        return float(np.linalg.norm(self.nominal.mass))

    def summary(self, p: Pmf) -> MomentSummary:
        return moment_summary(p, self.mu_bar)

    def to_json(self):
        return {
            "type": "moment",
            "gamma1": self.gamma1,
            "gamma2_lb": self.gamma2_lb,
            "gamma2_ub": self.gamma2_ub,
        }


@dataclass(frozen=True, eq=False)
class _ParametricSet(AmbiguitySet):
    parametric = True

    def __post_init__(self):
        if len(self.theta_grid) == 0:
            raise ValidationError("theta_grid must be nonempty")
        thetas = tuple(tuple(float(v) for v in t) for t in self.theta_grid)
        object.__setattr__(self, "theta_grid", thetas)
        object.__setattr__(self, "_members", tuple(self._generate(t) for t in thetas))
        nom = self.nominal_theta if self.nominal_theta is not None else thetas[0]
        object.__setattr__(self, "nominal_theta", tuple(float(v) for v in nom))
        object.__setattr__(self, "_nominal", self._generate(self.nominal_theta))

    @property
    def nominal(self) -> Pmf:
        return self._nominal

    @property
    def grid(self) -> Grid:
        return self.base_grid

    def members(self) -> tuple:
        return self._members

    def _contains_mass(self, m, tol):
        hit = [np.max(np.abs(m - q.mass), axis=-1) <= tol for q in self._members]
        return np.logical_or.reduce(hit)

    def contains(self, p: Pmf, tol: float = 1e-8) -> bool:
        self._check(p)
        return bool(self._contains_mass(p.mass, tol))

    def project(self, p) -> Pmf:
        """Nearest generated member in L2 (exact, by enumeration)."""
        v = self._as_mass(p)
        d = [np.linalg.norm(v - q.mass) for q in self._members]
        return self._members[int(np.argmin(d))]

    def sample_member(self, seed=None) -> Pmf:
        rng = np.random.default_rng(seed)
        return self._members[int(rng.integers(len(self._members)))]


@dataclass(frozen=True, eq=False)
class BinomialSet(_ParametricSet):
    """Scaled binomial pmfs ``(B - shift)/scale``, ``B ~ Bin(N, p)`` for (N, p) in theta_grid."""

    base_grid: Grid
    shift: float
    scale: float
    theta_grid: Sequence
    nominal_theta: tuple | None = None
    kind = "binomial"

    def _generate(self, theta) -> Pmf:
        n, p = theta
        if n != int(n) or n < 0:
            raise ValidationError(f"binomial trial count must be a nonnegative integer, got {n}")
        return scaled_binomial_pmf(self.base_grid, int(n), p, self.shift, self.scale)

    def to_json(self):
        return {
            "type": "binomial",
            "shift": self.shift,
            "scale": self.scale,
            "theta_grid": [list(t) for t in self.theta_grid],
            "nominal_theta": list(self.nominal_theta),
        }


@dataclass(frozen=True, eq=False)
class RayleighShiftSet(_ParametricSet):
    """Discretized Rayleigh pmfs with scale sigma and input shift delta for (sigma, delta) in theta_grid."""

    base_grid: Grid
    theta_grid: Sequence
    nominal_theta: tuple | None = None
    kind = "rayleigh_shift"

    def _generate(self, theta) -> Pmf:
        sigma, delta = theta
        return discretized_rayleigh_pmf(self.base_grid, sigma, delta)

    def to_json(self):
        return {
            "type": "rayleigh_shift",
            "theta_grid": [list(t) for t in self.theta_grid],
            "nominal_theta": list(self.nominal_theta),
        }


# ---------------------------------------------------------------------------
# functional interface and JSON


def contains(aset: AmbiguitySet, p: Pmf, tol: float = 1e-8) -> bool:
    return aset.contains(p, tol)


def project(aset: AmbiguitySet, p) -> Pmf:
    return aset.project(p)


def sample_member(aset: AmbiguitySet, seed=None) -> Pmf:
    return aset.sample_member(seed)


def ambiguity_from_json(obj: dict, nominal: Pmf | None, grid: Grid) -> AmbiguitySet:
    """Build a set from its JSON description.

    ``{"type": "l2"|"wasserstein1"|"binomial"|"rayleigh_shift"|"moment", ...}``.
    Discrepancy and moment sets are centred on ``nominal``; parametric sets
    generate their own pmfs (and their own nominal) from ``theta_grid``.
    """
    kind = obj.get("type")
    try:
        if kind == "l2":
            return L2Set(nominal, float(obj.get("gamma", DEFAULT_L2_GAMMA)))
        if kind == "wasserstein1":
            g = obj.get("gamma")
            return Wasserstein1Set(nominal, None if g is None else float(g))
        if kind == "moment":
            g1, lb, ub = DEFAULT_MOMENT
            return MomentSet(
                nominal,
                float(obj.get("gamma1", g1)),
                float(obj.get("gamma2_lb", lb)),
                float(obj.get("gamma2_ub", ub)),
            )
        if kind == "binomial":
            return BinomialSet(
                grid,
                float(obj["shift"]),
                float(obj["scale"]),
                [tuple(t) for t in obj["theta_grid"]],
                tuple(obj["nominal_theta"]) if "nominal_theta" in obj else None,
            )
        if kind == "rayleigh_shift":
            return RayleighShiftSet(
                grid,
                [tuple(t) for t in obj["theta_grid"]],
                tuple(obj["nominal_theta"]) if "nominal_theta" in obj else None,
            )
    except NonPositiveDensityArgument as exc:
        raise ConfigError(f"rayleigh_shift theta infeasible on this grid: {exc}") from exc
    except KeyError as exc:
        raise ConfigError(f"ambiguity set {kind!r} is missing field {exc}") from exc
    raise ConfigError(f"unknown ambiguity set type {kind!r}")
