"""Str-M versus DR-Str on the toy problem with L2 sets.

Str-M tunes the allocation to the nominal pmfs only; DR-Str tunes it to the
worst case over the sets.  The ratio of their worst-case variances measures
what robustness buys.  A reduced optimizer budget keeps this to a minute.
"""

import numpy as np

from drstrat.bo import BOConfig, dr_strat_objective, solve_dr_strat, solve_str_m
from drstrat.problem import toy_problem, toy_sets

toy = toy_problem()
sets = toy_sets(toy, "l2")
cfg = BOConfig(n_iterations=20, inner_starts=6)

strm = solve_str_m(toy, cfg=cfg)
dr = solve_dr_strat(toy, sets, cfg, str_m_allocation=strm.best_allocation)
v = dr_strat_objective(toy, sets, cfg)
wc_strm = v(strm.best_allocation.astype(float)).value
print("Str-M  allocation:", strm.best_allocation.tolist(), f"worst case {wc_strm:.4e}")
print("DR-Str allocation:", dr.best_allocation.tolist(), f"worst case {dr.best_value:.4e}")
print(f"ratio maxWC(Str-M) / maxWC(DR-Str) = {wc_strm / dr.best_value:.2f}")
print("budget shares, Str-M :", np.round(strm.best_allocation / toy.total, 2).tolist())
print("budget shares, DR-Str:", np.round(dr.best_allocation / toy.total, 2).tolist())
