"""Pseudospectral laboratory for coupled NLS and multiphase Whitham theory."""

from .cnls import (
    CnlsParams,
    CnlsState,
    ModulationField,
    PlaneWave,
    background_wave,
    evaluate_plane_wave,
    invariants,
    plane_wave,
    rescale_to_slow,
    step_cnls,
    to_polar,
)
from .correctors import (
    ExpansionBundle,
    OrderFit,
    ResidualReport,
    assemble,
    build_bundle,
    corrector_forcing,
    fit_order,
    residual,
    solve_corrector,
)
from .spectral import (
    GevreyIndex,
    Grid,
    SpectralField,
    StripSchedule,
    apply_entire,
    derivative,
    estimate_strip,
    gevrey_norm,
    product,
    shift_constant,
)
from .validate import (
    ExperimentConfig,
    ValidityReport,
    emit_report,
    reconstruct_phase,
    run_phase_comparison,
    run_residual_scaling,
    run_theorem_c,
    run_theorem_d,
)
from .whitham import (
    CharacteristicReport,
    ViscositySetting,
    classify,
    f_term,
    m_matrix,
    step_perturbed,
    step_wme,
    strip_monitor,
    wme_rhs,
)

__version__ = "0.1.0"
