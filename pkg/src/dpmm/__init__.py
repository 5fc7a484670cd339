"""Decentralized proximal method of multipliers over simulated networks.

A laboratory for convex problems with coupled equality and nonlinear
inequality constraints solved by a network of agents: a bulk-synchronous
prediction-correction engine with inexact proximal subproblems, a
Davis-Yin inner solver, a centralized invariant-checking observer, an
independent reference solver, and seeded experiment generators.
"""

from .engine import (
    AlgorithmParams,
    ConstantSchedule,
    DivergenceError,
    ExactSchedule,
    GeometricSchedule,
    ParameterError,
    PolynomialSchedule,
    ProportionalSchedule,
    SubproblemBudgetError,
    parse_schedule,
    run,
    validate_params,
)
from .functions import (
    AffineConstraint,
    ConeSpec,
    LinearLoss,
    LogisticConstraint,
    LogisticLoss,
    QuadraticLoss,
    SumLoss,
    project_box,
    project_polar_cone,
    prox_l1,
)
from .graphs import (
    DisconnectedGraphError,
    GraphError,
    MixingMatrix,
    NetworkTopology,
    build_laplacian,
    build_metropolis_weights,
    build_scaled_mixing,
    exact_lambda_max,
    random_connected_topology,
    read_topology,
    write_topology,
)
from .observer import (
    FejerReference,
    IterationTrace,
    Observer,
    RateCertificate,
    rate_analysis,
)
from .oracle import (
    KKTReport,
    OracleError,
    OracleSolution,
    kkt_check,
    multiplier_split,
    solve_reference,
)
from .problems import (
    CoupledProblem,
    LocalProblem,
    read_problem,
    write_problem,
)
from .subsolver import (
    SubproblemError,
    build_subproblem,
    davis_yin_solve,
    lipschitz_estimate,
    subproblem_residual,
)
from .experiments import (
    DEFAULTS,
    ExperimentConfig,
    generate_example1,
    generate_example2,
    generate_structural,
    run_experiment,
)

__version__ = "0.1.0"
