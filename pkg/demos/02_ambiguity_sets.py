"""The four ambiguity-set families around the first toy nominal.

For each family: a sampled member, its distance to the nominal, and the
worst-case estimator variance at an equal allocation found by the inner
solver (projected gradient ascent, or enumeration for the parametric set).
"""

import numpy as np

from drstrat.ambiguity import l2_distance, wasserstein1_distance_1d
from drstrat.estimators import dr_strat_variance
from drstrat.inner import maximize_over_set
from drstrat.problem import FAMILIES, toy_problem, toy_sets

toy = toy_problem()
n = np.full(toy.K, toy.total / toy.K)
nom = toy.nominals[0]
base = dr_strat_variance(n, nom, toy.reference, toy.strat, toy.means)
print(f"nominal variance at equal allocation: {base:.4e}")

for family in FAMILIES:
    aset = toy_sets(toy, family)[0]
    q = aset.sample_member(0)
    print(f"\n[{family}] sample member: L2 {l2_distance(q, nom):.4f}, "
          f"W1 {wasserstein1_distance_1d(q, nom):.4f}, mean {q.mean():.3f} (nominal {nom.mean():.3f})")
    best = maximize_over_set(n, aset, toy.reference, toy.strat, toy.means, starts=8)
    print(f"[{family}] worst-case variance {best.value:.4e} ({best.value / base:.2f}x nominal)")
    print(f"[{family}] worst-case pmf in the set: {aset.contains(best.pmf)}")
