"""Centralized gradient training: Adam, mini-batches, early stopping.

Runs are deterministic for a fixed seed: each epoch shuffles with a
generator derived from (seed, epoch index), and evaluation never touches
the random stream. The trainer logs a compute trace (sample counts and
spike counters per phase) that the evaluation module turns into MAC
counts and energy.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import stack_samples
from .errors import ConfigError, ContractError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    """Budget and seeding for one fit; lr/batch default to the model spec."""

    max_epochs: int = 150
    patience: int | None = 50
    learning_rate: float | None = None
    batch_size: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.patience is not None and self.patience < 1:
            raise ConfigError("patience must be >= 1 (or None to disable)")


@dataclass
class OptimizerState:
    """Adam moment accumulators, keyed like the parameter dict."""

    m: dict
    v: dict
    step: int = 0

    @classmethod
    def for_params(cls, params):
        return cls(
            m={k: np.zeros_like(t.data) for k, t in params.items()},
            v={k: np.zeros_like(t.data) for k, t in params.items()},
        )


def adam_update(params, grads, state, lr):
    """Bias-corrected Adam step, in place; returns (params, state)."""
    if set(grads) - set(params):
        raise ContractError("gradient names do not match parameters")
    state.step += 1
    t = state.step
    correction1 = 1.0 - ADAM_BETA1**t
    correction2 = 1.0 - ADAM_BETA2**t
    for k, g in grads.items():
        p = params[k]
        if g.shape != p.data.shape:
            raise ContractError(f"gradient shape mismatch for {k}")
        m = state.m[k]
        v = state.v[k]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * (g * g)
        p.data = p.data - lr * (m / correction1) / (np.sqrt(v / correction2) + ADAM_EPS)
    return params, state


@dataclass
class TraceEntry:
    """One training or evaluation pass over a set of samples."""

    phase: str
    samples: int
    spike_counts: dict = field(default_factory=dict)
    wall_seconds: float = 0.0


@dataclass
class ComputeTrace:
    """Ordered log of compute phases for energy accounting."""

    entries: list = field(default_factory=list)

    def add(self, entry):
        self.entries.append(entry)

    def extend(self, other):
        self.entries.extend(other.entries)

    def total_samples(self, phase=None):
        return sum(e.samples for e in self.entries if phase in (None, e.phase))


@dataclass
class EpochRecord:
    train_loss: float
    val_loss: float


@dataclass
class History:
    """Per-epoch (or per-round) losses plus the run's compute trace."""

    epochs: list = field(default_factory=list)
    stopped_epoch: int = 0
    best_val: float = float("inf")
    trace: ComputeTrace = field(default_factory=ComputeTrace)
    client_losses: list = field(default_factory=list)

    def to_lines(self):
        """One structured-text record per epoch."""
        lines = []
        for i, rec in enumerate(self.epochs, start=1):
            lines.append(
                f"epoch={i} train_loss={rec.train_loss!r} val_loss={rec.val_loss!r}"
            )
        lines.append(
            f"stopped_epoch={self.stopped_epoch} best_val={self.best_val!r}"
        )
        return lines


def _batch_indices(n, batch_size, rng=None):
    order = np.arange(n) if rng is None else rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def train_epoch(model, samples, opt_state, cfg, epoch_index, trace=None):
    """One shuffled pass of Adam over the training samples; mean batch loss."""
    if not samples:
        raise ConfigError("empty training set")
    lr = cfg.learning_rate if cfg.learning_rate is not None else model.spec.learning_rate
    batch_size = cfg.batch_size if cfg.batch_size is not None else model.spec.batch_size
    xs, ys = stack_samples(samples)
    rng = np.random.default_rng([cfg.seed, epoch_index])
    started = time.perf_counter()
    stats = {}
    losses = []
    for idx in _batch_indices(len(samples), batch_size, rng):
        with ad.Tape() as tape:
            pred = model.forward(xs[idx], stats=stats)
            loss = ad.mse_loss(pred, ad.Tensor(ys[idx]))
        ad.backward(tape, loss)
        grads = {k: t.grad for k, t in model.params.items() if t.grad is not None}
        adam_update(model.params, grads, opt_state, lr)
        losses.append(loss.item())
    if trace is not None:
        trace.add(
            TraceEntry(
                phase="train",
                samples=len(samples),
                spike_counts=stats,
                wall_seconds=time.perf_counter() - started,
            )
        )
    return float(np.mean(losses))


def evaluate_loss(model, samples, batch_size=None, trace=None):
    """Dataset MSE on normalized targets (forward only)."""
    if not samples:
        raise ConfigError("empty evaluation set")
    batch_size = batch_size if batch_size is not None else model.spec.batch_size
    xs, ys = stack_samples(samples)
    started = time.perf_counter()
    stats = {}
    sq_sum = 0.0
    for idx in _batch_indices(len(samples), batch_size):
        pred = model.forward(xs[idx], stats=stats)
        diff = pred.data - ys[idx]
        sq_sum += float(np.sum(diff * diff))
    if trace is not None:
        trace.add(
            TraceEntry(
                phase="eval",
                samples=len(samples),
                spike_counts=stats,
                wall_seconds=time.perf_counter() - started,
            )
        )
    return sq_sum / ys.size


def predict(model, samples, batch_size=None, trace=None):
    """Stacked (n, d') predictions for a sample list (forward only)."""
    if not samples:
        raise ConfigError("empty sample list")
    batch_size = batch_size if batch_size is not None else model.spec.batch_size
    xs, _ = stack_samples(samples)
    started = time.perf_counter()
    stats = {}
    outputs = []
    for idx in _batch_indices(len(samples), batch_size):
        outputs.append(model.forward(xs[idx], stats=stats).data)
    if trace is not None:
        trace.add(
            TraceEntry(
                phase="eval",
                samples=len(samples),
                spike_counts=stats,
                wall_seconds=time.perf_counter() - started,
            )
        )
    return np.concatenate(outputs, axis=0)


def fit(model, train_samples, val_samples, cfg):
    """Train with early stopping on validation loss; restore the best weights.

    Improvement means a strict decrease of the validation loss; after
    ``cfg.patience`` consecutive non-improving epochs training stops and
    the weights of the best epoch are restored.
    """

    if not train_samples or not val_samples:
        raise ConfigError("fit needs non-empty train and validation sets")
    opt_state = OptimizerState.for_params(model.params)
    history = History()
    best_weights = model.get_weights()
    since_improved = 0
    for epoch in range(cfg.max_epochs):
        train_loss = train_epoch(model, train_samples, opt_state, cfg, epoch, history.trace)
        val_loss = evaluate_loss(model, val_samples, cfg.batch_size, history.trace)
        history.epochs.append(EpochRecord(train_loss, val_loss))
        if val_loss < history.best_val:
            history.best_val = val_loss
            best_weights = model.get_weights()
            since_improved = 0
        else:
            since_improved += 1
        history.stopped_epoch = epoch + 1
        if cfg.patience is not None and since_improved >= cfg.patience:
            break
    model.set_weights(best_weights)
    return history
