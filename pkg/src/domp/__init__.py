"""Off-grid mmWave channel estimation with Dirichlet-kernel OMP variants."""

from domp.channel import (
    MultipathComponent,
    PhysicalChannel,
    UlaConfig,
    VirtualPeak,
    angle_to_peak,
    array_response_bs,
    array_response_ue,
    build_channel,
    dft_dictionary,
    dirichlet_atom,
    dirichlet_kernel,
    dtft_spectrum,
    from_beamspace,
    peak_to_angle,
    to_beamspace,
)
from domp.errors import (
    DegenerateInputError,
    DomainError,
    DompError,
    ScenarioError,
    SingularityError,
)
from domp.estimators import (
    ESTIMATORS,
    EstimateResult,
    EstimatorConfig,
    domp_lo,
    domp_mlb,
    domp_mslb,
    omp_standard,
)
from domp.measurement import (
    Observation,
    SensingSetup,
    build_sensing_setup,
    measure,
    random_beamformers,
    sensing_matrix,
)

__version__ = "0.1.0"

__all__ = [
    "ESTIMATORS",
    "DegenerateInputError",
    "DomainError",
    "DompError",
    "EstimateResult",
    "EstimatorConfig",
    "MultipathComponent",
    "Observation",
    "PhysicalChannel",
    "ScenarioError",
    "SensingSetup",
    "SingularityError",
    "UlaConfig",
    "VirtualPeak",
    "angle_to_peak",
    "array_response_bs",
    "array_response_ue",
    "build_channel",
    "build_sensing_setup",
    "dft_dictionary",
    "dirichlet_atom",
    "dirichlet_kernel",
    "domp_lo",
    "domp_mlb",
    "domp_mslb",
    "dtft_spectrum",
    "from_beamspace",
    "measure",
    "omp_standard",
    "peak_to_angle",
    "random_beamformers",
    "sensing_matrix",
    "to_beamspace",
]
