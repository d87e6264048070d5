"""Version-age-optimal cached status updates for a gossiping ring.

Builds the exact MDP of an energy-harvesting sensor behind a cache-enabled
aggregator, solves it for the update policy minimizing the long-run average
Version AoI, machine-checks the structural properties of the solution, and
reproduces parameter sweeps with a seeded Monte Carlo simulator.
"""

from .analysis import (
    StructureReport,
    check_delta_independence,
    check_value_monotone_in_deltaC,
    check_weak_accessibility,
    extract_thresholds,
    run_structure_checks,
)
from .errors import (
    FingerprintMismatchError,
    InstanceTooLargeError,
    KernelSizeError,
    ParameterError,
    SingularChainError,
    SolverNumericsError,
    StateSpaceError,
    VaoiError,
)
from .kernel import (
    StateSpace,
    TransitionKernel,
    build_kernel,
    decode_state,
    encode_state,
    export_csv_gz,
    next_state,
)
from .model import (
    EnvOutcome,
    State,
    SystemParams,
    cost,
    outcome_distribution,
    validate_params,
    validate_state,
)
from .sim import PolicySpec, Protocol, SimResult, SweepResult, simulate, sweep
from .solver import (
    Policy,
    SolveReport,
    ValueFunction,
    brute_force_optimal,
    extract_policy,
    markov_chain_average_cost,
    policy_average_cost,
    relative_value_iteration,
    solve_optimal,
)

__version__ = "0.1.0"
