"""Four-level (two-qubit) Hamiltonian tomography from fixed-basis traces."""

from .control import (
    PhaseEstimate,
    TomographyResult,
    estimate_gauge_phases,
    full_tomography,
    select_balanced_time,
)
from .errors import (
    AmbiguousArrangementError,
    BalanceError,
    DegenerateBasisError,
    DegenerateSpectrumError,
    IdentificationError,
    SimulationError,
    TomographyError,
    ValidationError,
)
from .estimator import (
    BasisSet,
    ModelFit,
    build_basis,
    estimate_coefficients,
    log_likelihood,
    model_fit_from_signal,
    optimize_frequencies,
    refine_degenerate,
)
from .experiment import (
    SamplingPlan,
    TraceSet,
    propagate_probabilities,
    propagate_state,
    read_traces,
    run_fixed_basis,
    run_two_step,
    superposition_signal,
    write_traces,
)
from .harness import (
    ErrorReport,
    RunConfig,
    generate_system,
    run_pipeline,
    write_report,
)
from .model import (
    EigenSystem,
    GaugePhases,
    SignalModel,
    apply_gauge,
    assemble_hamiltonian,
    eigendecompose,
    evaluate_traces,
    load_hamiltonian,
    save_hamiltonian,
    signal_model_of,
    validate_hamiltonian,
)
from .reconstruction import (
    LevelAssignment,
    PhaseTable,
    RankOneCompletion,
    complete_rank1,
    extract_phases,
    gauge_compensated_error,
    identify_levels,
    reconstruct,
    refine_phases,
)
from .spectral import PowerSpectrum, find_peaks, power_spectrum

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
