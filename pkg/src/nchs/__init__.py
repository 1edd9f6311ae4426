"""Nonlocal two-phase flow solver with adjoint-based optimal control.

The package simulates a conserved phase field coupled to incompressible
flow on a staggered uniform grid, where phase interactions enter through a
spatial convolution kernel instead of a gradient energy.  On top of the
forward solver sit exact discrete tangent/adjoint sweeps and a projected
gradient method for box-constrained force controls.

Layout:

- :mod:`nchs.geometry`    grid, fields, staggered operators, projection
- :mod:`nchs.material`    mobility/potential/viscosity law bundles
- :mod:`nchs.kernels`     convolution kernels and their discrete tables
- :mod:`nchs.controls`    force controls and tracking-cost weights
- :mod:`nchs.forward`     split-step time integrator and energy ledger
- :mod:`nchs.sensitivity` tangent and adjoint sweeps, Taylor/Lipschitz probes
- :mod:`nchs.optimize`    reduced cost, gradients, projected descent
- :mod:`nchs.workbench`   config files, binary snapshots, reports, CLI
"""

from .controls import ControlField, CostWeights, tracking_targets_from_states
from .forward import (
    AdmissibilityError,
    BoundViolationError,
    EnergyReport,
    SolverConfig,
    SolverError,
    StateSnapshot,
    Trajectory,
    bound_violation,
    ch_step,
    energy_report,
    mass,
    simulate,
)
from .geometry import (
    Grid,
    ScalarField,
    VectorField,
    advect_scalar,
    advect_velocity,
    cfl_number,
    divergence,
    face_average,
    gradient,
    laplacian_neumann,
    poisson_pressure,
    velocity_from_stream,
    viscous_term,
)
from .kernels import (
    DiscreteKernel,
    Kernel,
    admissibility_probe,
    build as build_kernel,
    convolve,
    grad_convolve,
    grad_convolve_centers,
    grad_convolve_dot,
    refinement_stability,
    self_adjointness_check,
)
from .material import (
    MaterialLaws,
    ValidationReport,
    chemical_potential,
    constant_mobility_quartic,
    eval_clamped,
    get_laws,
    initial_admissibility,
    log_degenerate,
    validate as validate_laws,
)
from .optimize import (
    CostBreakdown,
    OptimizationResult,
    OptimizerOptions,
    Problem,
    cost,
    fd_directional,
    fd_gradient_check,
    kkt_residual,
    project_box,
    projected_gradient_descent,
    reduced_gradient,
)
from .sensitivity import (
    AdjointSolution,
    LinearizedTrajectory,
    lipschitz_probe,
    solve_adjoint,
    solve_linearized,
    taylor_check,
)

__version__ = "0.1.0"

__all__ = [
    "AdmissibilityError",
    "BoundViolationError",
    "ControlField",
    "CostBreakdown",
    "CostWeights",
    "DiscreteKernel",
    "EnergyReport",
    "Grid",
    "Kernel",
    "LinearizedTrajectory",
    "MaterialLaws",
    "OptimizationResult",
    "OptimizerOptions",
    "Problem",
    "ScalarField",
    "SolverConfig",
    "SolverError",
    "StateSnapshot",
    "Trajectory",
    "ValidationReport",
    "VectorField",
    "AdjointSolution",
    "admissibility_probe",
    "advect_scalar",
    "advect_velocity",
    "bound_violation",
    "build_kernel",
    "cfl_number",
    "ch_step",
    "chemical_potential",
    "constant_mobility_quartic",
    "convolve",
    "cost",
    "divergence",
    "energy_report",
    "eval_clamped",
    "face_average",
    "fd_directional",
    "fd_gradient_check",
    "get_laws",
    "grad_convolve",
    "grad_convolve_centers",
    "grad_convolve_dot",
    "gradient",
    "initial_admissibility",
    "kkt_residual",
    "laplacian_neumann",
    "lipschitz_probe",
    "log_degenerate",
    "mass",
    "poisson_pressure",
    "project_box",
    "projected_gradient_descent",
    "reduced_gradient",
    "refinement_stability",
    "self_adjointness_check",
    "simulate",
    "solve_adjoint",
    "solve_linearized",
    "taylor_check",
    "tracking_targets_from_states",
    "validate_laws",
    "velocity_from_stream",
    "viscous_term",
]
