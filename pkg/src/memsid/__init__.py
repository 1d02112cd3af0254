"""Inverse identification of membrane thickness and stress from modal frequencies."""

from .identify import (
    CharacterizationReport,
    Classification,
    IdentificationConfig,
    IdentificationResult,
    assign_and_identify,
    characterize,
    classify,
)
from .peak_detect import Peak, find_peaks, refine_lorentzian
from .plate_model import (
    BucklingError,
    DomainError,
    MaterialProps,
    MembraneGeometry,
    ModeIndex,
    PiezoModel,
    SensorDesign,
    StressState,
    build_parameter_matrix,
    modal_frequencies,
    static_deflection,
    surface_stress_difference,
)
from .response_synth import AcquisitionSpec, DefectKind, DefectSpec, DieTruth, FrequencyResponse, synthesize
from .static_correlate import StaticSweep, adapt_gain, sweep
from .surrogate import InverseSurrogate, evaluate, fit_inverse
from .wafer_harness import WaferReport, WaferSpec, export_report, load_wafer_spec, run_characterization, run_wafer

__version__ = "0.1.0"
