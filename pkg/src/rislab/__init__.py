"""RIS-assisted indoor-factory link emulator with an E2-style control loop."""

from .channel import ChannelRealization, LinkParams, generate_realization, los_probability, pathloss_db
from .optimizer import (
    Codebook,
    PowerConfig,
    achievable_rate,
    baseline_rate,
    brute_force_optimum,
    build_codebook,
    combined_channel,
    optimize_iterative,
    optimize_quantized,
    select_codebook_entry,
)
from .ris import AmplitudeParams, PhaseConfig, RisSpec, phase_set, quantize_phase, reflection_amplitude
from .scenario import FactoryLayout, InfScenario, InfVariant, Placement, case_study_scenario, validate_scenario

__version__ = "0.1.0"
