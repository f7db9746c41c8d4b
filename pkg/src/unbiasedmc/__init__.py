"""Work-optimal randomization laws for unbiased multilevel SDE estimators."""

from .solver import (
    BetaSeries,
    RandomizationLaw,
    adaptive_solve,
    check_l2_condition,
    evaluate_objective,
    expected_work,
    pool_adjacent_violators,
    solve_truncated,
    subcanonical,
    tail_ratio,
    truncated_law,
)
from .samplers import BlackScholes, Heston, HestonHullWhite, bs_closed_form_price
from .estimators import run_batch, BenchResult
from .variance import estimate_betas

__version__ = "0.1.0"
