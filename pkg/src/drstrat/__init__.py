"""Distributionally robust stratified sampling budgets for simulations with
uncertain discrete input models."""

__version__ = "0.1.0"

from .discrete import Grid, Pmf, Stratification  # noqa: E402
from .problem import Problem, toy_problem, toy_sets, windcase_problem, windcase_sets  # noqa: E402
from .bo import BOConfig, SolveReport, solve_dr_strat, solve_str_m  # noqa: E402
from .inner import worst_case_variance  # noqa: E402

__all__ = [
    "BOConfig",
    "Grid",
    "Pmf",
    "Problem",
    "SolveReport",
    "Stratification",
    "solve_dr_strat",
    "solve_str_m",
    "toy_problem",
    "toy_sets",
    "windcase_problem",
    "windcase_sets",
    "worst_case_variance",
]
