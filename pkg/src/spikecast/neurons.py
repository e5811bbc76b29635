"""Spiking neuron dynamics: Lapicque, Leaky, RLeaky, Synaptic and Alpha.

Each step function advances one layer of neurons by one timestep on
autodiff tensors, so a network unrolled over T steps is differentiable
end to end through the surrogate spike gradient. Hidden layers use
subtract-reset: a firing neuron's potential drops by exactly the
threshold. Output layers use ``reset="none"``: the potential integrates
freely and no spikes are emitted.
"""

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .errors import ParameterError

NEURON_KINDS = ("Lapicque", "Leaky", "RLeaky", "Synaptic", "Alpha")


@dataclass(frozen=True)
class NeuronParams:
    """Static configuration for one layer of spiking neurons.

    beta is the membrane decay; alpha the synaptic (Synaptic) or
    excitatory (Alpha) trace decay; R/C the Lapicque resistance and
    capacitance; v_scale the RLeaky spike feedback factor.
    """

    kind: str
    theta: float = 1.0
    reset: str = "subtract"
    beta: float = 0.9
    alpha: float = 0.8
    R: float = 1.0
    C: float = 5.0
    v_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in NEURON_KINDS:
            raise ParameterError(f"unknown neuron kind {self.kind!r}")
        if self.reset not in ("subtract", "none"):
            raise ParameterError(f"unknown reset mode {self.reset!r}")
        if self.kind == "Lapicque":
            if self.R * self.C <= 1.0:
                raise ParameterError("Lapicque requires R*C > 1 so the decay is in (0,1)")
        else:
            if not 0.0 < self.beta < 1.0:
                raise ParameterError(f"beta must lie in (0,1), got {self.beta}")
        # Synaptic admits alpha = 0, the degenerate no-trace case.
        if self.kind == "Synaptic" and not 0.0 <= self.alpha < 1.0:
            raise ParameterError(f"alpha must lie in [0,1), got {self.alpha}")
        if self.kind == "Alpha" and not 0.0 < self.alpha < 1.0:
            raise ParameterError(f"alpha must lie in (0,1), got {self.alpha}")
        if self.kind == "Alpha" and self.alpha <= self.beta:
            raise ParameterError("Alpha requires alpha > beta (distinct time constants)")
        if self.reset == "subtract" and not self.theta > 0.0:
            raise ParameterError("firing threshold must be positive for spiking layers")


@dataclass
class NeuronState:
    """Per-layer dynamic state; unused traces stay None."""

    U: ad.Tensor
    I_syn: ad.Tensor | None = None
    I_exc: ad.Tensor | None = None
    I_inh: ad.Tensor | None = None
    last_spike: ad.Tensor | None = None


def init_state(params, shape):
    """Zeroed state matching the neuron kind's trace layout."""
    zeros = lambda: ad.Tensor(np.zeros(shape))
    state = NeuronState(U=zeros())
    if params.kind == "Synaptic":
        state.I_syn = zeros()
    elif params.kind == "Alpha":
        state.I_exc = zeros()
        state.I_inh = zeros()
    elif params.kind == "RLeaky":
        state.last_spike = zeros()
    return state


@lru_cache(maxsize=None)
def alpha_gain(alpha, beta, max_steps=100_000):
    """1 / max_t (alpha^t - beta^t): scales a unit impulse response to peak at 1."""
    best = 0.0
    a_pow, b_pow = 1.0, 1.0
    for _ in range(max_steps):
        a_pow *= alpha
        b_pow *= beta
        diff = a_pow - b_pow
        if diff > best:
            best = diff
        elif diff < best:
            # Difference of exponentials is unimodal; past the peak we stop.
            break
    return 1.0 / best


def _fire(u, params, surrogate, smooth):
    """Threshold and reset; returns (post-reset potential, spikes)."""
    if params.reset == "none":
        return u, None
    spikes = ad.spike_threshold(u, params.theta, surrogate, smooth=smooth)
    if not np.isfinite(params.theta):
        # theta = +inf silences the layer; 0 * inf would poison the reset.
        return u, spikes
    return ad.subtract(u, ad.multiply(spikes, params.theta)), spikes


def lapicque_step(state, i_in, params, surrogate=None, smooth=False):
    """RC-circuit update: U' = (1 - 1/RC) U + (1/RC) I R, then fire/reset."""
    rc = params.R * params.C
    u = ad.add(
        ad.multiply(state.U, 1.0 - 1.0 / rc),
        ad.multiply(i_in, params.R / rc),
    )
    u, spikes = _fire(u, params, surrogate, smooth)
    return replace(state, U=u), spikes


def leaky_step(state, i_in, params, surrogate=None, smooth=False):
    """U' = beta U + (1 - beta) I, then fire/reset."""
    u = ad.add(ad.multiply(state.U, params.beta), ad.multiply(i_in, 1.0 - params.beta))
    u, spikes = _fire(u, params, surrogate, smooth)
    return replace(state, U=u), spikes


def rleaky_step(state, i_in, params, surrogate=None, smooth=False, v_scale=None):
    """Leaky update fed by I plus the previous step's spikes scaled by V.

    ``v_scale`` may be a tensor so V can be trained; it defaults to the
    constant in ``params``.
    """

    v = params.v_scale if v_scale is None else v_scale
    fed_back = ad.multiply(state.last_spike, v)
    drive = ad.add(i_in, fed_back)
    u = ad.add(ad.multiply(state.U, params.beta), ad.multiply(drive, 1.0 - params.beta))
    u, spikes = _fire(u, params, surrogate, smooth)
    new_last = spikes if spikes is not None else state.last_spike
    return replace(state, U=u, last_spike=new_last), spikes


def synaptic_step(state, i_in, params, surrogate=None, smooth=False):
    """Trace-filtered drive: I_syn' = alpha I_syn + I; U' = beta U + I_syn'.

    Unlike the Leaky update the drive enters unscaled.
    """

    i_syn = ad.add(ad.multiply(state.I_syn, params.alpha), i_in)
    u = ad.add(ad.multiply(state.U, params.beta), i_syn)
    u, spikes = _fire(u, params, surrogate, smooth)
    return replace(state, U=u, I_syn=i_syn), spikes


def alpha_step(state, i_in, params, surrogate=None, smooth=False):
    """Difference-of-exponentials filter normalized to unit impulse peak.

    I_exc' = alpha I_exc + I; I_inh' = beta I_inh - I;
    U' = gain (I_exc' + I_inh'), then fire/reset.
    """

    i_exc = ad.add(ad.multiply(state.I_exc, params.alpha), i_in)
    i_inh = ad.subtract(ad.multiply(state.I_inh, params.beta), i_in)
    gain = alpha_gain(params.alpha, params.beta)
    u = ad.multiply(ad.add(i_exc, i_inh), gain)
    u, spikes = _fire(u, params, surrogate, smooth)
    return replace(state, U=u, I_exc=i_exc, I_inh=i_inh), spikes


_STEP_FNS = {
    "Lapicque": lapicque_step,
    "Leaky": leaky_step,
    "RLeaky": rleaky_step,
    "Synaptic": synaptic_step,
    "Alpha": alpha_step,
}


def step(state, i_in, params, surrogate=None, smooth=False, v_scale=None):
    """Dispatch one update by neuron kind; returns (state', spikes)."""
    fn = _STEP_FNS[params.kind]
    if params.kind == "RLeaky":
        return fn(state, i_in, params, surrogate, smooth, v_scale)
    return fn(state, i_in, params, surrogate, smooth)


def state_vars(kind):
    """Number of dynamic state vectors one neuron of this kind carries."""
    return {"Lapicque": 1, "Leaky": 1, "RLeaky": 2, "Synaptic": 2, "Alpha": 3}[kind]
