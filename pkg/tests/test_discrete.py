import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import comb

from drstrat.discrete import (
    Grid,
    Pmf,
    Stratification,
    conditional_pmf,
    discretized_rayleigh_pmf,
    reference_from_nominals,
    scaled_binomial_pmf,
    strata_probabilities,
)
from drstrat.errors import (
    GridMismatch,
    NonIntegerPreimage,
    NonPositiveDensityArgument,
    PmfNormalizationError,
    StratumZeroProbability,
    ValidationError,
)
from drstrat.problem import toy_grid, wind_grid


def test_grid_rejects_unsorted_and_short():
    with pytest.raises(ValidationError):
        Grid([0.0, 0.0, 1.0])
    with pytest.raises(ValidationError):
        Grid([1.0])


def test_pmf_renormalizes_float_noise_and_rejects_bugs():
    g = Grid([0, 1, 2])
    p = Pmf(g, [0.2, 0.3, 0.5 + 1e-11])
    assert abs(p.mass.sum() - 1) < 1e-15
    with pytest.raises(PmfNormalizationError):
        Pmf(g, [0.2, 0.3, 0.6])
    with pytest.raises(PmfNormalizationError):
        Pmf(g, [-0.1, 0.6, 0.5])
    with pytest.raises(GridMismatch):
        Pmf(g, [0.5, 0.5])


def test_strata_probabilities_uniform():
    g = Grid.uniform(0, 1, 4)
    om = strata_probabilities(Pmf.uniform(g), Stratification.equal_contiguous(4, 2))
    np.testing.assert_allclose(om, [0.5, 0.5])


def test_point_mass_leaves_empty_stratum():
    g = Grid.uniform(0, 1, 4)
    strat = Stratification(([0], [1, 2, 3]), 4)
    with pytest.raises(StratumZeroProbability) as info:
        strata_probabilities(Pmf(g, [1, 0, 0, 0]), strat)
    assert info.value.stratum == 1


def test_toy_strata_probabilities_match_binomial_sums(toy):
    om = strata_probabilities(toy.reference, toy.strat)
    b = np.arange(23, 58)
    raw = [comb(n, b) * p**b * (1 - p) ** (n - b) for n, p in ((75, 0.55), (85, 0.45))]
    ref = 0.5 * sum(r / r.sum() for r in raw)
    expected = ref.reshape(7, 5).sum(axis=1)
    assert np.all(om > 0)
    np.testing.assert_allclose(om, expected, rtol=1e-12)
    assert abs(om.sum() - 1) < 1e-12


def test_conditional_pmf():
    g = Grid([0, 1, 2])
    c = conditional_pmf(Pmf(g, [0.2, 0.3, 0.5]), Stratification(([0], [1, 2]), 3), 1)
    np.testing.assert_allclose(c.mass, [0.375, 0.625])
    u = conditional_pmf(Pmf.uniform(Grid.uniform(0, 1, 6)), Stratification.equal_contiguous(6, 2), 0)
    np.testing.assert_allclose(u.mass, [1 / 3] * 3)


def test_toy_conditional_pmf_by_hand(toy):
    c = conditional_pmf(toy.reference, toy.strat, 3)
    m = toy.reference.mass[15:20]
    np.testing.assert_allclose(c.mass, m / m.sum(), rtol=1e-14)
    np.testing.assert_allclose(c.grid.points, toy.grid.points[15:20])


def test_reference_from_nominals():
    g = Grid([0, 1])
    p = Pmf(g, [0.3, 0.7])
    assert reference_from_nominals([p, p]).allclose(p)
    np.testing.assert_allclose(reference_from_nominals([Pmf(g, [1, 0]), Pmf(g, [0, 1])]).mass, [0.5, 0.5])


def test_toy_reference_spot_checks(toy):
    b = np.arange(23, 58)
    for i in (0, 17, 34):
        parts = []
        for n, p in ((75, 0.55), (85, 0.45)):
            full = comb(n, b) * p**b * (1 - p) ** (n - b)
            parts.append(full[i] / full.sum())
        assert math.isclose(toy.reference.mass[i], 0.5 * sum(parts), rel_tol=1e-12)


def test_binomial_two_point():
    g = Grid([0.0, 1.0])
    np.testing.assert_allclose(scaled_binomial_pmf(g, 1, 0.5, 0.0, 1.0).mass, [0.5, 0.5])


def test_binomial_toy_mass_and_truncation():
    grid = toy_grid()
    p = scaled_binomial_pmf(grid, 75, 0.55, 40, math.sqrt(20))
    b = np.arange(23, 58)
    w = comb(75, b) * 0.55**b * 0.45 ** (75 - b)
    assert w.sum() < 1  # tails outside 23..57 are cut
    assert math.isclose(p.mass[41 - 23], w[41 - 23] / w.sum(), rel_tol=1e-12)
    assert abs(p.mass.sum() - 1) < 1e-12


def test_binomial_rejects_off_lattice_grid():
    with pytest.raises(NonIntegerPreimage):
        scaled_binomial_pmf(Grid([0.0, 0.5, 1.0]), 4, 0.5, 0.0, 1.0)


def test_rayleigh_nominal_and_mode():
    grid = wind_grid()
    sigma = 9 * math.sqrt(2 / math.pi)
    p = discretized_rayleigh_pmf(grid, sigma, 1.5)
    x = grid.points
    w = (x - 1.5) / sigma**2 * np.exp(-0.5 * ((x - 1.5) / sigma) ** 2)
    np.testing.assert_allclose(p.mass, w / w.sum(), rtol=1e-12)
    assert abs(grid.points[np.argmax(p.mass)] - (1.5 + sigma)) <= 0.05 + 1e-9
    with pytest.raises(NonPositiveDensityArgument):
        discretized_rayleigh_pmf(grid, sigma, 3.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 12), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_strata_then_conditionals_rebuild_pmf(n, k, seed):
    k = min(k, n)
    rng = np.random.default_rng(seed)
    g = Grid(np.arange(n, dtype=float))
    p = Pmf.normalized(g, rng.dirichlet(np.ones(n)) + 1e-3)
    strat = Stratification(tuple(np.array_split(rng.permutation(n), k)), n)
    om = strata_probabilities(p, strat)
    rebuilt = np.zeros(n)
    for j in range(k):
        rebuilt[strat.index_sets[j]] = om[j] * conditional_pmf(p, strat, j).mass
    np.testing.assert_allclose(rebuilt, p.mass, atol=1e-15)
    assert abs(om.sum() - 1) < 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 10), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_reference_inside_hull(n, m, seed):
    rng = np.random.default_rng(seed)
    g = Grid(np.arange(n, dtype=float))
    noms = [Pmf(g, rng.dirichlet(np.ones(n))) for _ in range(m)]
    ref = reference_from_nominals(noms).mass
    stack = np.array([q.mass for q in noms])
    assert np.all(stack.min(0) - 1e-15 <= ref) and np.all(ref <= stack.max(0) + 1e-15)
    assert abs(ref.sum() - 1) < 1e-10 and np.all(ref >= 0)


def test_strata_must_partition():
    with pytest.raises(ValidationError):
        Stratification(([0, 1], [1, 2]), 3)
    with pytest.raises(ValidationError):
        Stratification(([0], []), 1)
    s = Stratification(([2, 0], [1]), 3)  # non-contiguous is fine
    np.testing.assert_array_equal(s.labels, [0, 1, 0])
