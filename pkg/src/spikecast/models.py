"""The eight forecaster architectures over a shared parameter convention.

Every model maps a normalized (S, d) window batch to a (B, d') next-step
prediction and keeps its trainable weights in a flat name -> Tensor dict.
Spiking networks run flatten -> dense -> spiking hidden layer
(subtract-reset) -> dense -> integrating output layer (no reset) for T
repeat-current timesteps and read the output membrane potential at the
final step.
"""

import json
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import autodiff as ad
from . import esn as esn_mod
from . import neurons
from .errors import ConfigError, ContractError, ShapeError

CHECKPOINT_VERSION = 1

BASELINE_ARCHS = ("MLP", "CNN", "RNN", "ESN")
MODEL_NAMES = BASELINE_ARCHS + neurons.NEURON_KINDS

# Channel plan for the four 3x3 same-padding conv layers.
CNN_CHANNELS = (1, 8, 16, 16, 8)

# Tuned defaults per model (hidden size, threshold, learning rate, batch).
_DEFAULTS = {
    "Lapicque": dict(hidden=256, theta=1.6, learning_rate=1.09e-4, batch_size=130),
    "Leaky": dict(hidden=96, theta=1.7, learning_rate=2.39e-4, batch_size=64),
    "RLeaky": dict(hidden=256, theta=2.0, learning_rate=5.85e-4, batch_size=32),
    "Synaptic": dict(hidden=128, theta=1.7, learning_rate=1.07e-4, batch_size=128),
    "Alpha": dict(
        hidden=256, theta=2.0, learning_rate=5.85e-4, batch_size=32, alpha=0.9, beta=0.8
    ),
    "MLP": dict(hidden=128, learning_rate=1e-3, batch_size=128),
    "CNN": dict(hidden=128, learning_rate=1e-3, batch_size=128),
    "RNN": dict(hidden=128, learning_rate=1e-3, batch_size=128),
    "ESN": dict(hidden=128, learning_rate=1e-3, batch_size=128),
}


@dataclass(frozen=True)
class ModelSpec:
    """Architecture kind plus every knob needed to rebuild the model."""

    arch: str
    kind: str | None = None
    hidden: int = 128
    timesteps: int = 7
    theta: float = 1.0
    learning_rate: float = 1e-3
    batch_size: int = 128
    window: int = 10
    n_features: int = 11
    n_targets: int = 5
    beta: float = 0.9
    alpha: float = 0.8
    resistance: float = 1.0
    capacitance: float = 5.0
    v_init: float = 1.0
    surrogate_slope: float = 25.0
    spectral_radius: float = 0.9
    leak: float = 1.0
    input_scale: float = 0.5

    def __post_init__(self):
        if self.arch not in ("MLP", "CNN", "RNN", "ESN", "SNN"):
            raise ConfigError(f"unknown architecture {self.arch!r}")
        if self.arch == "SNN":
            if self.kind not in neurons.NEURON_KINDS:
                raise ConfigError(f"SNN requires a neuron kind, got {self.kind!r}")
            if self.timesteps < 1:
                raise ConfigError("spike timesteps must be >= 1")
        if self.hidden < 1:
            raise ConfigError("hidden size must be positive")
        if self.window < 1 or self.n_features < 1:
            raise ConfigError("window and feature count must be positive")
        if not 1 <= self.n_targets <= self.n_features:
            raise ConfigError("target count must lie in [1, n_features]")
        if self.batch_size < 1:
            raise ConfigError("batch size must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")
        if self.arch == "CNN" and (self.window < 2 or self.n_features < 2):
            raise ShapeError("CNN pooling needs window and feature count >= 2")

    @property
    def is_snn(self):
        return self.arch == "SNN"

    def neuron_params(self, reset):
        return neurons.NeuronParams(
            kind=self.kind,
            theta=self.theta,
            reset=reset,
            beta=self.beta,
            alpha=self.alpha,
            R=self.resistance,
            C=self.capacitance,
            v_scale=self.v_init,
        )


def default_spec(name, **overrides):
    """Spec for a model by its public name, with tuned defaults applied."""
    if name not in MODEL_NAMES:
        raise ConfigError(f"unknown model {name!r}; choose from {MODEL_NAMES}")
    fields = dict(_DEFAULTS[name])
    if name in neurons.NEURON_KINDS:
        fields.update(arch="SNN", kind=name)
    else:
        fields.update(arch=name)
    fields.update(overrides)
    return ModelSpec(**fields)


def encode_direct(window, timesteps):
    """Repeat-current encoding: the same flattened window at every step."""
    if timesteps < 1:
        raise ConfigError("timesteps must be >= 1")
    arr = np.asarray(window, dtype=np.float64)
    flat = arr.reshape(arr.shape[0], -1) if arr.ndim == 3 else arr.reshape(-1)
    return [flat] * timesteps


def _uniform_init(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return ad.Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def _init_params(spec, rng):
    s, d, dp, h = spec.window, spec.n_features, spec.n_targets, spec.hidden
    params = {}
    if spec.arch == "MLP":
        params["w1"] = _uniform_init(rng, (s * d, h), s * d)
        params["b1"] = _uniform_init(rng, (h,), s * d)
        params["w2"] = _uniform_init(rng, (h, dp), h)
        params["b2"] = _uniform_init(rng, (dp,), h)
    elif spec.arch == "CNN":
        for i in range(4):
            cin, cout = CNN_CHANNELS[i], CNN_CHANNELS[i + 1]
            fan = cin * 9
            params[f"k{i + 1}"] = _uniform_init(rng, (cout, cin, 3, 3), fan)
            params[f"c{i + 1}"] = _uniform_init(rng, (cout, 1, 1), fan)
        flat = CNN_CHANNELS[-1] * (s // 2) * (d // 2)
        params["w1"] = _uniform_init(rng, (flat, h), flat)
        params["b1"] = _uniform_init(rng, (h,), flat)
        params["w2"] = _uniform_init(rng, (h, dp), h)
        params["b2"] = _uniform_init(rng, (dp,), h)
    elif spec.arch == "RNN":
        params["w_xh"] = _uniform_init(rng, (d, h), h)
        params["w_hh"] = _uniform_init(rng, (h, h), h)
        params["b_h"] = _uniform_init(rng, (h,), h)
        params["w_out"] = _uniform_init(rng, (h, dp), h)
        params["b_out"] = _uniform_init(rng, (dp,), h)
    elif spec.arch == "ESN":
        params["w_out"] = _uniform_init(rng, (h, dp), h)
        params["b_out"] = _uniform_init(rng, (dp,), h)
    else:  # SNN
        params["w_in"] = _uniform_init(rng, (s * d, h), s * d)
        params["b_in"] = _uniform_init(rng, (h,), s * d)
        params["w_out"] = _uniform_init(rng, (h, dp), h)
        params["b_out"] = _uniform_init(rng, (dp,), h)
        if spec.kind == "RLeaky":
            params["v_scale"] = ad.Tensor(np.array([spec.v_init]), requires_grad=True)
    return params


class Model:
    """A forecaster: spec, named parameter tensors, optional fixed reservoir."""

    def __init__(self, spec, params, reservoir=None):
        if spec.arch == "ESN" and reservoir is None:
            raise ContractError("ESN model needs its reservoir")
        self.spec = spec
        self.params = params
        self.reservoir = reservoir

    def parameter_count(self):
        return sum(t.data.size for t in self.params.values())

    def get_weights(self):
        """Copy of every trainable array, keyed by parameter name."""
        return {k: t.data.copy() for k, t in self.params.items()}

    def set_weights(self, weights):
        if set(weights) != set(self.params):
            raise ContractError("weight names do not match this model")
        for k, arr in weights.items():
            if arr.shape != self.params[k].data.shape:
                raise ContractError(f"shape mismatch for {k}")
            self.params[k].data = np.array(arr, dtype=np.float64)
            self.params[k].grad = None

    def forward(self, windows, stats=None, smooth_spikes=False):
        """Predict a (B, d') tensor from a (B, S, d) window batch.

        ``stats`` collects spike counters for energy accounting;
        ``smooth_spikes`` swaps the hard threshold for its smooth
        surrogate so finite differences are meaningful.
        """

        windows = np.asarray(windows, dtype=np.float64)
        if windows.ndim == 2:
            windows = windows[None]
        expected = (self.spec.window, self.spec.n_features)
        if windows.shape[1:] != expected:
            raise ShapeError(f"window batch {windows.shape} does not match {expected}")
        if self.spec.arch == "MLP":
            return self._mlp(windows)
        if self.spec.arch == "CNN":
            return self._cnn(windows)
        if self.spec.arch == "RNN":
            return self._rnn(windows)
        if self.spec.arch == "ESN":
            return self._esn(windows)
        return self._snn(windows, stats, smooth_spikes)

    def _mlp(self, windows):
        p = self.params
        x = ad.Tensor(windows.reshape(windows.shape[0], -1))
        h = ad.relu(ad.matmul(x, p["w1"]) + p["b1"])
        return ad.matmul(h, p["w2"]) + p["b2"]

    def _cnn(self, windows):
        p = self.params
        h = ad.Tensor(windows[:, None, :, :])
        for i in range(1, 5):
            h = ad.relu(ad.conv2d(h, p[f"k{i}"], stride=1, padding=1) + p[f"c{i}"])
        h = ad.avg_pool2d(h, 2)
        h = ad.flatten(h, start_axis=1)
        h = ad.relu(ad.matmul(h, p["w1"]) + p["b1"])
        return ad.matmul(h, p["w2"]) + p["b2"]

    def _rnn(self, windows):
        p = self.params
        bsz = windows.shape[0]
        h = ad.Tensor(np.zeros((bsz, self.spec.hidden)))
        for t in range(self.spec.window):
            x_t = ad.Tensor(windows[:, t, :])
            h = ad.tanh(ad.matmul(x_t, p["w_xh"]) + ad.matmul(h, p["w_hh"]) + p["b_h"])
        return ad.matmul(h, p["w_out"]) + p["b_out"]

    def _esn(self, windows):
        # The reservoir is fixed, so it rolls outside the tape and only
        # the readout participates in the backward pass.
        final_states = esn_mod.run_reservoir(self.reservoir, windows)
        return ad.matmul(ad.Tensor(final_states), self.params["w_out"]) + self.params["b_out"]

    def _snn(self, windows, stats, smooth):
        spec = self.spec
        p = self.params
        bsz = windows.shape[0]
        flat = ad.Tensor(windows.reshape(bsz, -1))
        # Repeat-current encoding injects the same current every step, so
        # the input projection is computed once and reused.
        current = ad.matmul(flat, p["w_in"]) + p["b_in"]
        hidden_params = spec.neuron_params(reset="subtract")
        out_params = spec.neuron_params(reset="none")
        surrogate = ad.SurrogateSpec(slope=spec.surrogate_slope)
        h_state = neurons.init_state(hidden_params, (bsz, spec.hidden))
        o_state = neurons.init_state(out_params, (bsz, spec.n_targets))
        v = p.get("v_scale")
        for _ in range(spec.timesteps):
            h_state, spikes = neurons.step(
                h_state, current, hidden_params, surrogate, smooth, v_scale=v
            )
            if stats is not None:
                stats["hidden_spikes"] = stats.get("hidden_spikes", 0.0) + float(
                    spikes.data.sum()
                )
            out_current = ad.matmul(spikes, p["w_out"]) + p["b_out"]
            o_state, _ = neurons.step(o_state, out_current, out_params, surrogate, smooth)
        return o_state.U


def build_model(name_or_spec, seed, **overrides):
    """Instantiate a model with seeded weights (and reservoir for ESN)."""
    if isinstance(name_or_spec, ModelSpec):
        spec = replace(name_or_spec, **overrides) if overrides else name_or_spec
    else:
        spec = default_spec(name_or_spec, **overrides)
    if spec.is_snn:
        spec.neuron_params(reset="subtract")  # fail fast on bad neuron params
    rng = np.random.default_rng([seed, 0])
    params = _init_params(spec, rng)
    reservoir = None
    if spec.arch == "ESN":
        reservoir = esn_mod.esn_init(
            [seed, 1],
            n_reservoir=spec.hidden,
            rho_target=spec.spectral_radius,
            input_scale=spec.input_scale,
            leak=spec.leak,
            n_inputs=spec.n_features,
        )
    return Model(spec, params, reservoir)


def save_checkpoint(model, path):
    """Dump spec + weights (+ reservoir buffers) to a bit-exact npz file."""
    arrays = {f"param.{k}": t.data for k, t in model.params.items()}
    if model.reservoir is not None:
        arrays["buffer.w"] = model.reservoir.w
        arrays["buffer.w_in"] = model.reservoir.w_in
        arrays["buffer.leak"] = np.asarray(model.reservoir.leak)
        arrays["buffer.rho"] = np.asarray(model.reservoir.rho_target)
    meta = json.dumps(
        {"version": CHECKPOINT_VERSION, "spec": asdict(model.spec)}, sort_keys=True
    )
    np.savez(path, meta=np.frombuffer(meta.encode("utf-8"), dtype=np.uint8), **arrays)


def load_checkpoint(path):
    with np.load(path) as blob:
        meta = json.loads(bytes(blob["meta"]).decode("utf-8"))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ContractError(f"unsupported checkpoint version {meta.get('version')}")
        spec = ModelSpec(**meta["spec"])
        params = {}
        reservoir = None
        for key in blob.files:
            if key.startswith("param."):
                params[key[len("param.") :]] = ad.Tensor(blob[key], requires_grad=True)
        if spec.arch == "ESN":
            reservoir = esn_mod.Reservoir(
                w_in=blob["buffer.w_in"],
                w=blob["buffer.w"],
                leak=float(blob["buffer.leak"]),
                rho_target=float(blob["buffer.rho"]),
                seed=-1,
            )
            reservoir.w.setflags(write=False)
            reservoir.w_in.setflags(write=False)
    return Model(spec, params, reservoir)


@dataclass(frozen=True)
class CostProfile:
    """Per-sample forward arithmetic of one architecture.

    ``spike_layers`` lists (spike counter key, dense MACs per sample,
    per-spike cost) for layers whose work is gated by presynaptic spikes;
    ``update_layers`` lists (layer name, neuron state updates per sample).
    """

    static_fwd: float
    trainable_fwd: float
    spike_layers: tuple = ()
    update_layers: tuple = ()

    @property
    def neuron_updates(self):
        return sum(n for _, n in self.update_layers)


def forward_cost(spec):
    """Analytic MAC/update counts for one sample's forward pass."""
    s, d, dp, h = spec.window, spec.n_features, spec.n_targets, spec.hidden
    if spec.arch == "MLP":
        macs = s * d * h + h * dp
        return CostProfile(macs, macs)
    if spec.arch == "CNN":
        conv = sum(
            CNN_CHANNELS[i] * CNN_CHANNELS[i + 1] * 9 * s * d for i in range(4)
        )
        pooled = CNN_CHANNELS[-1] * (s // 2) * (d // 2)
        macs = conv + pooled + pooled * h + h * dp
        return CostProfile(macs, macs)
    if spec.arch == "RNN":
        macs = s * (d * h + h * h) + h * dp
        return CostProfile(macs, macs)
    if spec.arch == "ESN":
        reservoir = s * (d * h + h * h)
        readout = h * dp
        return CostProfile(reservoir + readout, readout)
    # SNN: the input projection runs once per sample (repeat-current
    # encoding); the spike-fed layers run every timestep.
    t = spec.timesteps
    static = s * d * h
    layers = [("hidden_spikes", h * dp * t, dp)]
    if spec.kind == "RLeaky":
        layers.append(("hidden_spikes", h * t, 1))
    return CostProfile(
        static_fwd=static,
        trainable_fwd=static,
        spike_layers=tuple(layers),
        update_layers=(("hidden", h * t), ("output", dp * t)),
    )
