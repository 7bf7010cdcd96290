"""Exact, approximate and entropy-regularized dynamic programming on tabular MDPs."""

from .algorithms import (
    CapExceeded,
    ErrorInjector,
    RunTrace,
    Stop,
    policy_snapshot,
    run_advantage_learning,
    run_ampi,
    run_cvi,
    run_mpi,
    run_reg_mpi,
    run_soft_vi,
)
from .bounds import (
    al_realized_bound,
    ampi_bound,
    cvi_bound,
    fit_envelope,
    rate_envelope,
    reg_mpi_bound,
    tail_sum,
)
from .cliff import CliffConfig, build_cliff, preset
from .mdp import (
    ContractError,
    ConvergenceError,
    TabularMDP,
    bellman_apply,
    bellman_max,
    exact_optimal,
    greedy_policy,
    policy_evaluation_exact,
    q_from_v,
    sup_dist,
)
from .regularize import (
    EntropyRegularizer,
    boltzmann,
    m_step_reg_apply,
    neg_entropy,
    reg_bellman_apply,
    reg_bellman_max,
    reg_bellman_q_max,
    smoothed_max,
)
from .schedule import Regime, classify_regime, lambda_at, parse_schedule, rate_limits

__version__ = "0.1.0"
