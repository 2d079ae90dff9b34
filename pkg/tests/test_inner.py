import numpy as np
import pytest

from drstrat.ambiguity import BinomialSet, L2Set, MomentSet, Wasserstein1Set
from drstrat.discrete import Grid, Pmf, Stratification, reference_from_nominals
from drstrat.errors import GridTooLarge
from drstrat.estimators import dr_strat_variance
from drstrat.inner import (
    VarianceObjective,
    brute_force_inner,
    maximize_over_set,
    simplex_lattice,
    worst_case_variance,
)

from .conftest import random_pmf, small_problem

N_TOY = np.array([15, 14, 14, 14, 15, 14, 14], dtype=float)


def test_degenerate_sets_reduce_to_nominals(toy):
    sets = [L2Set(p, 0.0) for p in toy.nominals]
    res = worst_case_variance(N_TOY, sets, toy.reference, toy.strat, toy.means, starts=4)
    nominal = [dr_strat_variance(N_TOY, p, toy.reference, toy.strat, toy.means) for p in toy.nominals]
    assert np.isclose(res.value, max(nominal), rtol=1e-12)
    assert res.argmax_model == int(np.argmax(nominal))


def test_parametric_matches_enumeration(toy):
    thetas = [(n, p) for n in (70, 75, 80, 85) for p in (0.45, 0.5, 0.55, 0.6, 0.4)]
    s = BinomialSet(toy.grid, 40.0, np.sqrt(20), thetas)
    res = worst_case_variance(N_TOY, [s], toy.reference, toy.strat, toy.means)
    obj = VarianceObjective(N_TOY, toy.reference, toy.strat, toy.means)
    assert len(s.members()) == 20
    assert res.value == max(obj.value(q.mass) for q in s.members())
    brute = max(dr_strat_variance(N_TOY, q, toy.reference, toy.strat, toy.means) for q in s.members())
    assert np.isclose(res.value, brute, rtol=1e-12)


def test_larger_l2_ball_never_lowers_value(toy):
    vals = []
    for gamma in (0.0, 0.02, 0.05):
        sets = [L2Set(p, gamma) for p in toy.nominals]
        vals.append(worst_case_variance(N_TOY, sets, toy.reference, toy.strat, toy.means, starts=6).value)
    assert vals[0] <= vals[1] + 1e-15 <= vals[2] + 2e-15


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    for _ in range(20):
        prob = small_problem(rng, n_points=6, K=2)
        obj = VarianceObjective(rng.uniform(1, 10, 2), prob.reference, prob.strat, prob.means)
        p = random_pmf(rng, 6, 0.05)
        g = obj.gradient(p)
        h = 1e-6
        fd = np.array([(obj.value(p + h * e) - obj.value(p - h * e)) / (2 * h) for e in np.eye(6)])
        assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(fd)


def test_ascent_beats_random_feasible_samples():
    rng = np.random.default_rng(3)
    prob = small_problem(rng, n_points=4, K=2)
    n = np.array([6.0, 9.0])
    s = L2Set(prob.nominals[0], 0.15)
    got = maximize_over_set(n, s, prob.reference, prob.strat, prob.means)
    obj = VarianceObjective(n, prob.reference, prob.strat, prob.means)
    # uniform draws on the simplex, kept when inside the ball
    draws = rng.dirichlet(np.ones(4), 400_000)
    samples = draws[s.contains_many(draws, 0.0)][:10_000]
    assert len(samples) == 10_000
    assert got.value >= max(obj.value(q) for q in samples) - 1e-9


def test_matches_brute_force_on_three_points():
    rng = np.random.default_rng(8)
    for _ in range(5):
        prob = small_problem(rng, n_points=3, K=2)
        n = rng.uniform(2, 10, 2)
        s = L2Set(prob.nominals[0], 0.1)
        asc = maximize_over_set(n, s, prob.reference, prob.strat, prob.means).value
        bf, _ = brute_force_inner(n, s, prob.reference, prob.strat, prob.means, 200)
        assert abs(asc - bf) <= 0.02 * bf
        assert asc >= bf - 1e-12


def test_brute_force_contract():
    rng = np.random.default_rng(2)
    prob = small_problem(rng, n_points=4, K=2)
    n = np.array([4.0, 7.0])
    s = L2Set(prob.nominals[1], 0.1)
    vals = [brute_force_inner(n, s, prob.reference, prob.strat, prob.means, r)[0] for r in (5, 10, 20, 40)]
    assert all(a <= b + 1e-15 for a, b in zip(vals, vals[1:]))
    deg = L2Set(prob.nominals[1], 0.0)
    v, _ = brute_force_inner(n, deg, prob.reference, prob.strat, prob.means, 10)
    assert np.isclose(v, dr_strat_variance(n, prob.nominals[1], prob.reference, prob.strat, prob.means), rtol=1e-13)
    big = Grid(np.arange(7.0))
    with pytest.raises(GridTooLarge):
        brute_force_inner(np.ones(1), L2Set(Pmf.uniform(big)), Pmf.uniform(big),
                          Stratification.equal_contiguous(7, 1), np.full(7, 0.5), 4)


def test_lattice_counts():
    lat = simplex_lattice(3, 4)
    assert lat.shape == (15, 3)
    np.testing.assert_allclose(lat.sum(1), 1)


@pytest.mark.parametrize("make", [lambda p: L2Set(p, 0.05), Wasserstein1Set, MomentSet])
def test_result_invariants(toy, make):
    sets = [make(p) for p in toy.nominals]
    a = worst_case_variance(N_TOY, sets, toy.reference, toy.strat, toy.means, starts=4, seed=3)
    b = worst_case_variance(N_TOY, sets, toy.reference, toy.strat, toy.means, starts=4, seed=3)
    assert a.value == b.value and np.array_equal(a.argmax_pmf.mass, b.argmax_pmf.mass)
    assert a.value == max(a.per_model_values)
    assert sets[a.argmax_model].contains(a.argmax_pmf, 1e-8)
    for m, s in enumerate(sets):
        assert s.contains(a.per_model_pmfs[m], 1e-8)
        assert a.per_model_values[m] >= dr_strat_variance(N_TOY, s.nominal, toy.reference, toy.strat, toy.means)


def test_budget_scaling(toy):
    sets = [L2Set(p, 0.05) for p in toy.nominals]
    base = worst_case_variance(N_TOY, sets, toy.reference, toy.strat, toy.means, starts=4)
    doubled = worst_case_variance(2 * N_TOY, sets, toy.reference, toy.strat, toy.means, starts=4)
    tripled = worst_case_variance(3 * N_TOY, sets, toy.reference, toy.strat, toy.means, starts=4)
    assert doubled.value == base.value / 2
    assert np.isclose(tripled.value, base.value / 3, rtol=1e-6)


def test_threads_do_not_change_result(toy):
    sets = [Wasserstein1Set(p) for p in toy.nominals]
    a = worst_case_variance(N_TOY, sets, toy.reference, toy.strat, toy.means, starts=4, threads=1)
    b = worst_case_variance(N_TOY, sets, toy.reference, toy.strat, toy.means, starts=4, threads=2)
    assert a.value == b.value and a.argmax_model == b.argmax_model


def test_reference_must_be_positive():
    g = Grid(np.arange(3.0))
    ref = Pmf(g, [0.5, 0.5, 0.0])
    with pytest.raises(Exception):
        VarianceObjective([3.0], ref, Stratification.equal_contiguous(3, 1), [0.1, 0.2, 0.3])


def test_reference_helper_is_positive_on_toy(toy):
    assert np.all(reference_from_nominals(toy.nominals).mass > 0)
