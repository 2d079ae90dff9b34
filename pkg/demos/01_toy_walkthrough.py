"""Toy problem: two binomial input models, one threshold, seven strata.

Prints the tail probability under each nominal model, then compares the
DR-strat estimator variance at an equal allocation and at the Neyman
allocation for the reference pmf.
"""

import numpy as np

from drstrat.discrete import strata_probabilities
from drstrat.estimators import dr_strat_variance, neyman_allocation, stratum_output_std, true_mean
from drstrat.bo import round_allocation
from drstrat.problem import toy_problem

toy = toy_problem()
print(f"grid: {len(toy.grid)} points on [{toy.grid.points[0]:.3f}, {toy.grid.points[-1]:.3f}]")
print(f"strata: {toy.K}, budget N_T = {toy.total}")
for m, p in enumerate(toy.nominals):
    print(f"model {m}: P(Y > 5.2) = {true_mean(p, toy.means):.4f}")

omega = strata_probabilities(toy.reference, toy.strat)
sigma = stratum_output_std(toy.reference, toy.strat, toy.means)
print("stratum probabilities under the reference:", np.round(omega, 3))

equal = round_allocation(np.full(toy.K, toy.total / toy.K), toy.total)
neyman = round_allocation(neyman_allocation(omega, sigma, toy.total), toy.total)
for name, n in (("equal", equal), ("neyman(ref)", neyman)):
    v = [dr_strat_variance(n, p, toy.reference, toy.strat, toy.means) for p in toy.nominals]
    print(f"{name:12s} n = {n.tolist()}  variance per model = {v[0]:.3e}, {v[1]:.3e}")
