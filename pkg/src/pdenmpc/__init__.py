"""Matrix-free two-layer splitting solver for PDE-constrained NMPC."""

from .bench import (
    BenchConfig,
    ClosedLoopLog,
    HeatBench,
    HeatPlateParams,
    ReferenceSpec,
    reference_field,
    run_closed_loop,
    uniform_actuator_axes,
)
from .coefficients import (
    Coefficient,
    ConstantCoefficient,
    GeneralCoefficient,
    WCoefficient,
    ZERO,
)
from .costs import (
    BoxInputConstraints,
    CallableConstraints,
    CallableCost,
    NoConstraints,
    QuadraticTrackingCost,
)
from .errors import (
    BarrierDomainError,
    ConfigError,
    PdenmpcError,
    SingularStageError,
    SolverDiverged,
    ZeroDiagonalError,
)
from .lower import (
    StageSolveConfig,
    StageWorkspace,
    inner_solve,
    jacobi_linear_solve,
    solve_stage,
)
from .newton import (
    BlockTridiagonalKkt,
    assemble_kkt,
    elimination_fill_fraction,
    newton_solve,
    newton_step,
    solve_block_tridiagonal,
)
from .ocp import (
    IterateData,
    KktResidual,
    OcpProblem,
    StageBlock,
    Trajectory,
    default_initial_trajectory,
    evaluate_iterate,
    hamiltonian,
    kkt_residual,
    kkt_stage_residual,
    shift_trajectory,
    stage_jacobian,
)
from .pde import (
    DiscretizedSystem,
    PdeModel,
    SpatialGrid,
    discretize,
    finite_difference_check,
)
from .spectral import (
    ConvergenceFactorResult,
    IterationMatrixOperator,
    convergence_factor,
    verify_gs_squared,
    verify_lemma_nilpotent,
)
from .upper import (
    SolveReport,
    UpperMethod,
    fraction_to_boundary,
    solve,
    step,
)

__all__ = [
    "BenchConfig", "ClosedLoopLog", "HeatBench", "HeatPlateParams",
    "ReferenceSpec", "reference_field", "run_closed_loop",
    "uniform_actuator_axes",
    "Coefficient", "ConstantCoefficient", "GeneralCoefficient",
    "WCoefficient", "ZERO",
    "BoxInputConstraints", "CallableConstraints", "CallableCost",
    "NoConstraints", "QuadraticTrackingCost",
    "BarrierDomainError", "ConfigError", "PdenmpcError",
    "SingularStageError", "SolverDiverged", "ZeroDiagonalError",
    "StageSolveConfig", "StageWorkspace", "inner_solve",
    "jacobi_linear_solve", "solve_stage",
    "BlockTridiagonalKkt", "assemble_kkt", "elimination_fill_fraction",
    "newton_solve", "newton_step", "solve_block_tridiagonal",
    "IterateData", "KktResidual", "OcpProblem", "StageBlock", "Trajectory",
    "default_initial_trajectory", "evaluate_iterate", "hamiltonian",
    "kkt_residual", "kkt_stage_residual", "shift_trajectory",
    "stage_jacobian",
    "DiscretizedSystem", "PdeModel", "SpatialGrid", "discretize",
    "finite_difference_check",
    "ConvergenceFactorResult", "IterationMatrixOperator",
    "convergence_factor", "verify_gs_squared", "verify_lemma_nilpotent",
    "SolveReport", "UpperMethod", "fraction_to_boundary", "solve", "step",
]
