"""Solvers and verifiers for null control of stochastic heat equations.

Everything is built on a closed-form Dirichlet sine basis over box domains
(exact Gram integrals), a binary-tree model of the Brownian filtration
(exact conditional expectations), and a forward/backward pair of schemes
defined as exact transposes of one another, so the duality identities the
control theory rests on hold at machine precision in the discrete model.
"""

from .actuator import (
    GameValue,
    NashReport,
    PlacementProblem,
    check_nash,
    knapsack_max,
    minimax_gap,
    optimize_actuator,
    project_onto_theta,
)
from .backend import backend_name, select_backend
from .density import ActuatorDensity, CellGrid, MultiplierMatrix, multiplier_matrix, theta_weight
from .dynamics import (
    AdjointTrajectory,
    ForwardTrajectory,
    adjoint_solve,
    duality_identity,
    forward_solve,
)
from .errors import (
    DegenerateObservationError,
    InvalidBudgetError,
    InvalidConfigError,
    InvalidDensityError,
    InvalidRegionError,
    IterationLimitError,
    OptimizerError,
    StochheatError,
)
from .hum import (
    GramOperator,
    HumSolution,
    assemble_gram_operator,
    minimal_norm_over_admissible,
    solve_hum,
    verify_null_control,
)
from .observability import (
    ObservabilityReport,
    TelescopingSequence,
    build_telescoping,
    check_decay,
    check_interpolation,
    l1_observability_constant,
    l2_observability_constant,
    level_set_bound,
)
from .spectral import (
    BoxDomain,
    GramMatrix,
    Region,
    SpectralBasis,
    build_basis,
    full_region,
    gram,
    spectral_inequality_constant,
    spectral_project,
)
from .tree import (
    AdaptedField,
    FiltrationTree,
    NoiseCoefficient,
    TerminalData,
    TimeWindow,
    conditional_expectation,
    expected_norm_sq,
    sample_terminal,
)

__version__ = "0.1.0"
