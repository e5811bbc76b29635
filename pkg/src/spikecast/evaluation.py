"""Error metrics, deterministic energy estimation and the sustainability index.

Energy is modeled from analytic MAC and neuron-update counts rather than
measured, so every run is reproducible on any machine. The per-operation
constants are order-of-magnitude literature values and fully
configurable; the backward pass is costed at twice the forward MACs.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .models import forward_cost

ENERGY_MODES = ("analytic", "event-driven", "wallclock")
JOULES_PER_WH = 3600.0


@dataclass(frozen=True)
class MetricsReport:
    """NRMSE, MAE, RMSE and MSE over an evaluation block.

    ``nrmse`` is RMSE divided by the grand mean of the targets; it is NaN
    when that mean is zero.
    """

    nrmse: float
    mae: float
    rmse: float
    mse: float
    n_steps: int
    n_targets: int


def metrics(predictions, targets):
    """Pointwise error metrics over a (T, d') prediction block."""
    pred = np.asarray(predictions, dtype=np.float64)
    act = np.asarray(targets, dtype=np.float64)
    if pred.ndim == 1:
        pred = pred[:, None]
        act = act[:, None]
    if pred.shape != act.shape:
        raise ShapeError(f"predictions {pred.shape} vs targets {act.shape}")
    if pred.shape[0] < 1:
        raise ShapeError("need at least one evaluation row")
    diff = pred - act
    mse = float(np.mean(diff * diff))
    rmse = math.sqrt(mse)
    mae = float(np.mean(np.abs(diff)))
    target_mean = float(np.mean(act))
    nrmse = rmse / target_mean if target_mean != 0.0 else float("nan")
    return MetricsReport(
        nrmse=nrmse,
        mae=mae,
        rmse=rmse,
        mse=mse,
        n_steps=pred.shape[0],
        n_targets=pred.shape[1],
    )


@dataclass(frozen=True)
class EnergyModel:
    """Deterministic training-energy model.

    analytic: every dense MAC plus every neuron state update is costed.
    event-driven: dense work in spike-fed layers is replaced by the
    synaptic events that actually occurred.
    wallclock: elapsed seconds times an average device power.
    """

    mode: str = "event-driven"
    j_per_mac: float = 4.6e-12
    j_per_neuron_update: float = 1e-12
    device_watts: float = 15.0

    def __post_init__(self):
        if self.mode not in ENERGY_MODES:
            raise ConfigError(f"unknown energy mode {self.mode!r}")
        if self.j_per_mac <= 0 or self.j_per_neuron_update <= 0 or self.device_watts <= 0:
            raise ConfigError("energy constants must be positive")


@dataclass(frozen=True)
class ComputeTotals:
    """Aggregated arithmetic work of one run."""

    macs: float
    neuron_updates: float
    synaptic_events: float
    macs_event_driven: float
    wall_seconds: float
    updates_by_layer: tuple = ()


def count_compute(spec, trace):
    """Total MACs, neuron updates and spike-gated synaptic events of a trace.

    Training passes cost forward plus twice the trainable forward;
    evaluation passes cost the forward only. Synaptic events count one
    per presynaptic spike per consumer, so a silent layer contributes
    zero events while its neuron updates remain.
    """

    profile = forward_cost(spec)
    dense_spike_macs = sum(m for _, m, _ in profile.spike_layers)
    macs = 0.0
    macs_event = 0.0
    events_total = 0.0
    wall = 0.0
    by_layer = {name: 0.0 for name, _ in profile.update_layers}
    for entry in trace.entries:
        n = entry.samples
        events = sum(
            entry.spike_counts.get(key, 0.0) * per_spike
            for key, _, per_spike in profile.spike_layers
        )
        fwd_analytic = n * (profile.static_fwd + dense_spike_macs)
        fwd_event = n * profile.static_fwd + events
        if entry.phase == "train":
            macs += fwd_analytic + 2.0 * (n * (profile.trainable_fwd + dense_spike_macs))
            macs_event += fwd_event + 2.0 * (n * profile.trainable_fwd + events)
        else:
            macs += fwd_analytic
            macs_event += fwd_event
        events_total += events
        for name, per_sample in profile.update_layers:
            by_layer[name] += n * per_sample
        wall += entry.wall_seconds
    return ComputeTotals(
        macs=macs,
        neuron_updates=sum(by_layer.values()),
        synaptic_events=events_total,
        macs_event_driven=macs_event,
        wall_seconds=wall,
        updates_by_layer=tuple(sorted(by_layer.items())),
    )


def estimate_energy(spec, trace, energy_model):
    """Training energy in Wh under the configured mode."""
    totals = count_compute(spec, trace)
    if energy_model.mode == "wallclock":
        return totals.wall_seconds * energy_model.device_watts / JOULES_PER_WH
    macs = totals.macs if energy_model.mode == "analytic" else totals.macs_event_driven
    joules = macs * energy_model.j_per_mac
    joules += totals.neuron_updates * energy_model.j_per_neuron_update
    return joules / JOULES_PER_WH


@dataclass(frozen=True)
class SustainabilityInputs:
    """Validation error, training energy (Wh), exchanged data (MB), exponents."""

    e_val: float
    c_tr: float
    d_mb: float
    a: float = 0.33
    b: float = 0.33
    c: float = 0.33

    def __post_init__(self):
        if self.e_val < 0 or self.c_tr < 0 or self.d_mb < 0:
            raise ConfigError("sustainability inputs must be non-negative")
        if self.a < 0 or self.b < 0 or self.c < 0:
            raise ConfigError("sustainability exponents must be non-negative")


def sustainability_index(inputs):
    """S = (1 + E_val)^a * (1 + C_Tr)^b * (1 + D)^c; lower is better."""
    return (
        (1.0 + inputs.e_val) ** inputs.a
        * (1.0 + inputs.c_tr) ** inputs.b
        * (1.0 + inputs.d_mb) ** inputs.c
    )


@dataclass(frozen=True)
class RunReport:
    """Per-experiment record: test metrics, energy, exchanged data and S.

    ``timesteps`` is None for architectures that ignore the spike
    timestep sweep; ``test_loss`` is the normalized-scale MSE the model
    was trained on, kept so reports can be rebuilt without retraining.
    """

    model: str
    setting: str
    timesteps: int | None
    nrmse: float
    mae: float
    rmse: float
    mse: float
    test_loss: float
    energy_wh: float
    energy_mode: str
    d_mb: float
    s_index: float
    seed: int

    def to_record(self):
        return {
            "model": self.model,
            "setting": self.setting,
            "T": self.timesteps,
            "nrmse": self.nrmse,
            "mae": self.mae,
            "rmse": self.rmse,
            "mse": self.mse,
            "test_loss": self.test_loss,
            "energy_wh": self.energy_wh,
            "energy_mode": self.energy_mode,
            "D_mb": self.d_mb,
            "S": self.s_index,
            "seed": self.seed,
        }

    @classmethod
    def from_record(cls, rec):
        return cls(
            model=rec["model"],
            setting=rec["setting"],
            timesteps=rec["T"],
            nrmse=rec["nrmse"],
            mae=rec["mae"],
            rmse=rec["rmse"],
            mse=rec["mse"],
            test_loss=rec["test_loss"],
            energy_wh=rec["energy_wh"],
            energy_mode=rec["energy_mode"],
            d_mb=rec["D_mb"],
            s_index=rec["S"],
            seed=rec["seed"],
        )
