"""Stable Lagrange subspaces and bundles for quadratic-regulator
Hamiltonians at finite spectral truncation.

Two construction routes (Lyapunov-Perron fixed point and ordered-Schur
oracle) for the stationary frequency-condition case, plus the
spatial-averaging pipeline with nonautonomous drivers, uniform
nonoscillation and the singular-form certificate.
"""

from .dichotomy import (
    DichotomySplit,
    GridFunction,
    adjoint_kernel_defect,
    dichotomy_split,
    fourier_resolvent_check,
    green_kernel,
    lyapunov_perron_apply,
)
from .frequency import (
    FrequencyGrid,
    QuadraticFormTriple,
    frequency_condition_margin,
    inverse_norm_certificate,
    make_frequency_grid,
    smith_condition,
    smith_form_triple,
    transfer_M,
)
from .spatial import (
    Driver,
    FiberResult,
    SAConfig,
    assemble_forms,
    assemble_nonaut_hamiltonian,
    build_fiber,
    build_fibers,
    condition_margins,
    constant_driver,
    contraction_certificate,
    driver_make,
    exp_decay_fit,
    fiber_continuity,
    gap_search,
    implication_sweep,
    spatial_avg_condition,
    v_form_certificate,
)
from .spectral import (
    FractionalScale,
    ModeProjectors,
    SpectralModel,
    eigenvalue_generator,
    fractional_inner_product,
    make_spectral_model,
    mode_projectors,
    resolvent_apply,
    semigroup_apply,
)
from .stationary import (
    Hamiltonian,
    NonoscillationResult,
    StableLagrangeResult,
    assemble_hamiltonian,
    coercivity_check,
    estimate_eps0,
    extract_nonoscillation,
    l2_controllability,
    lyapunov_inequality_check,
    riccati_integral_check,
    riccati_residual,
    stable_lagrange_lp,
    stable_lagrange_naive,
    stable_lagrange_schur,
)
from .symplectic import (
    GraphOperator,
    LagrangeSubspace,
    Subspace,
    apply_J,
    graph_over,
    grassmann_distance,
    intersection_dimension,
    is_lagrange,
    isotropy_defect,
    sum_codimension,
)

__version__ = "0.1.0"
