"""Bio-inspired forecasting and sustainability benchmark for cellular traffic.

Spiking, reservoir and conventional forecasters trained on base-station
traffic windows, in centralized and simulated-federated settings, each
run scored with error metrics, a modeled energy estimate and a composite
sustainability index.
"""

__version__ = "0.1.0"

from .autodiff import SurrogateSpec, Tape, Tensor, backward, grad_check
from .data import (
    NormStats,
    StationSeries,
    SyntheticSpec,
    WindowedSample,
    apply_normalizer,
    build_splits,
    chronological_split,
    denormalize_targets,
    fit_normalizer,
    generate_synthetic,
    load_csv,
    make_windows,
)
from .esn import Reservoir, esn_init, esn_step, fit_readout_ridge, spectral_radius
from .evaluation import (
    ComputeTotals,
    EnergyModel,
    MetricsReport,
    SustainabilityInputs,
    count_compute,
    estimate_energy,
    metrics,
    sustainability_index,
)
from .federated import (
    ClientState,
    CommsLedger,
    RoundConfig,
    fedavg,
    partition_by_station,
    run_federated,
)
from .models import (
    Model,
    ModelSpec,
    build_model,
    default_spec,
    encode_direct,
    load_checkpoint,
    save_checkpoint,
)
from .neurons import (
    NeuronParams,
    NeuronState,
    alpha_step,
    init_state,
    lapicque_step,
    leaky_step,
    rleaky_step,
    synaptic_step,
)
from .training import History, OptimizerState, TrainConfig, adam_update, fit, train_epoch
