"""chwall: Cahn-Hilliard dynamics in a box with permeable walls.

A structure-preserving finite-difference toolkit for the coupled
bulk/surface phase-separation flow: energy-stable time stepping with an
exact discrete energy law, stationary solves, spectral classification,
and exponent/rate probes for the approach to equilibrium.
"""

__version__ = "0.1.0"

from .grid import (
    GridMode,
    PairField,
    StripGrid,
    build_grid,
    h_inner,
    h_norm,
    laplace_beltrami,
    laplacian,
    load_field,
    normal_derivative,
    save_field,
)
from .operators import (
    NormReport,
    WentzellOperator,
    apply_A,
    assemble_wentzell,
    h1_equiv_norm,
    norm_report,
    solve_Ainv,
    v_norm,
    x_norm,
    x_norm_via_form,
)
from .energy import (
    EnergyReport,
    Potential,
    PotentialKind,
    chemical_potential,
    dissipation,
    double_well,
    energy,
    make_potential,
    polynomial_potential,
    stationary_residual,
)
from .evolution import (
    EvolutionAbort,
    GuardAbort,
    StepperConfig,
    TrajectoryRecord,
    evolve,
    step_newton,
    step_semi_implicit,
)
from .stationary import (
    EquilibriumSolution,
    SolveMethod,
    find_equilibrium,
    minimize_energy,
    newton_refine,
    omega_limit,
)
from .analysis import (
    LSProbeReport,
    LinearizedOperator,
    RateReport,
    SpectralReport,
    assemble_linearized,
    fit_gap_exponent,
    ls_probe,
    rate_fit,
    solve_augmented,
    spectrum,
)
