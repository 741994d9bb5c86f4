"""Monolithic multi-time-step coupling for transient transport problems."""

from .analysis import (
    DriftReport,
    PerturbationSpec,
    StabilityReport,
    alpha_max,
    critical_dt,
    measure_drift,
    perturbation_probe,
    predict_drift_baumgarte,
    predict_drift_dcontinuity,
    rate_energy,
    stability_report,
)
from .assembly import (
    BoundaryConditions,
    FormulationTag,
    SubdomainSystem,
    TransportCoefficients,
    assemble_subdomain,
    check_symmetric_part,
    element_peclet,
    supg_tau,
)
from .decomposition import (
    ConstraintMap,
    apply_C,
    apply_C_transpose,
    build_constraints,
    build_dof_maps,
)
from .mesh import (
    Mesh,
    MeshFormatError,
    MeshValidationError,
    PartitionMap,
    build_interval_mesh,
    build_rectangle_mesh,
    load_mesh,
    load_partition,
    write_mesh,
    write_partition,
)
from .mts_core import (
    AssembledProblem,
    ConfigurationError,
    CouplingConfig,
    MonolithicSolver,
    SolverError,
    SystemState,
    clip_negative,
    initial_lambda,
    initial_rates,
    initial_state,
    interpolate_lambda,
    run,
    step,
)
from .problems import (
    BimolecularScenario,
    ProblemDefinition,
    SubdomainSetup,
    advective_bimolecular_problem,
    diffusion_bimolecular_problem,
    hemker_2d_problem,
    invariants_transform,
    recover_species,
    run_scenario,
    sdof_problem,
    singular_1d_problem,
)

__version__ = "0.1.0"
