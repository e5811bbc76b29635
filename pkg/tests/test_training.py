import numpy as np
import pytest

from spikecast import autodiff as ad
from spikecast import models, training
from spikecast.data import WindowedSample
from spikecast.errors import ConfigError


def _toy_samples(rng, n, spec, weights=None):
    """Windows with linearly generated targets (plus the model's own map)."""
    xs = rng.uniform(0, 1, size=(n, spec.window, spec.n_features))
    if weights is None:
        w = rng.uniform(-0.5, 0.5, size=(spec.window * spec.n_features, spec.n_targets))
    else:
        w = weights
    ys = xs.reshape(n, -1) @ w
    return [WindowedSample(x=xs[i], y=ys[i]) for i in range(n)]


def test_adam_zero_gradient_leaves_params_unchanged():
    p = {"w": ad.Tensor([1.0, -2.0], requires_grad=True)}
    state = training.OptimizerState.for_params(p)
    before = p["w"].data.copy()
    training.adam_update(p, {"w": np.zeros(2)}, state, lr=0.1)
    assert np.array_equal(p["w"].data, before)


def test_adam_minimizes_square():
    p = {"w": ad.Tensor([1.0], requires_grad=True)}
    state = training.OptimizerState.for_params(p)
    for _ in range(500):
        grad = 2.0 * p["w"].data
        training.adam_update(p, {"w": grad}, state, lr=0.1)
    assert abs(p["w"].data[0]) < 1e-2


def test_adam_first_step_is_signed_learning_rate():
    for g in (0.5, -3.0, 1e-3):
        p = {"w": ad.Tensor([0.0], requires_grad=True)}
        state = training.OptimizerState.for_params(p)
        training.adam_update(p, {"w": np.array([g])}, state, lr=0.01)
        assert p["w"].data[0] == pytest.approx(-0.01 * np.sign(g), rel=1e-5)


def test_train_epoch_deterministic():
    rng = np.random.default_rng(0)
    spec = models.default_spec("MLP", hidden=8, window=4, batch_size=8)
    samples = _toy_samples(rng, 40, spec)
    losses = []
    for _ in range(2):
        model = models.build_model(spec, seed=1)
        opt = training.OptimizerState.for_params(model.params)
        cfg = training.TrainConfig(seed=5)
        run = [training.train_epoch(model, samples, opt, cfg, e) for e in range(3)]
        losses.append(run)
    assert losses[0] == losses[1]


def test_train_epoch_fixed_point_at_minimum():
    rng = np.random.default_rng(1)
    spec = models.default_spec("MLP", hidden=8, window=4, batch_size=16)
    model = models.build_model(spec, seed=2)
    xs = rng.uniform(0, 1, size=(30, spec.window, spec.n_features))
    ys = model.forward(xs).data  # targets equal current predictions
    samples = [WindowedSample(x=xs[i], y=ys[i]) for i in range(30)]
    before = model.get_weights()
    opt = training.OptimizerState.for_params(model.params)
    loss = training.train_epoch(model, samples, opt, training.TrainConfig(seed=0), 0)
    assert loss < 1e-28
    for k, v in model.get_weights().items():
        assert np.allclose(v, before[k], atol=1e-12)


def test_training_improves_linear_toy():
    rng = np.random.default_rng(3)
    spec = models.default_spec("MLP", hidden=16, window=4, batch_size=16)
    samples = _toy_samples(rng, 80, spec)
    train, val = samples[:60], samples[60:]
    model = models.build_model(spec, seed=3)
    opt = training.OptimizerState.for_params(model.params)
    cfg = training.TrainConfig(seed=3)
    training.train_epoch(model, train, opt, cfg, 0)
    loss_after_1 = training.evaluate_loss(model, val)
    for e in range(1, 50):
        training.train_epoch(model, train, opt, cfg, e)
    loss_after_50 = training.evaluate_loss(model, val)
    assert loss_after_50 < loss_after_1


def test_fit_stalls_at_patience_plus_one():
    rng = np.random.default_rng(4)
    spec = models.default_spec("MLP", hidden=4, window=3, batch_size=8, learning_rate=1e-9)
    model = models.build_model(spec, seed=0)
    xs = rng.uniform(0, 1, size=(20, spec.window, spec.n_features))
    ys = model.forward(xs).data
    samples = [WindowedSample(x=xs[i], y=ys[i]) for i in range(20)]
    # Loss starts and stays at zero: no strict improvement ever happens.
    history = training.fit(model, samples[:12], samples[12:], training.TrainConfig(max_epochs=50, patience=3, seed=0))
    assert history.stopped_epoch == 4


def test_fit_runs_all_epochs_when_patience_exceeds_budget():
    rng = np.random.default_rng(5)
    spec = models.default_spec("MLP", hidden=16, window=4, batch_size=16)
    samples = _toy_samples(rng, 60, spec)
    model = models.build_model(spec, seed=1)
    cfg = training.TrainConfig(max_epochs=10, patience=50, seed=1)
    history = training.fit(model, samples[:45], samples[45:], cfg)
    assert history.stopped_epoch == 10
    assert len(history.epochs) == 10


def test_fit_restores_best_weights():
    rng = np.random.default_rng(6)
    spec = models.default_spec("MLP", hidden=16, window=4, batch_size=8, learning_rate=5e-2)
    samples = _toy_samples(rng, 60, spec)
    model = models.build_model(spec, seed=2)
    cfg = training.TrainConfig(max_epochs=30, patience=30, seed=2)
    history = training.fit(model, samples[:45], samples[45:], cfg)
    re_eval = training.evaluate_loss(model, samples[45:])
    assert re_eval == pytest.approx(history.best_val, abs=1e-12)


def test_best_val_is_running_minimum():
    rng = np.random.default_rng(7)
    spec = models.default_spec("MLP", hidden=8, window=4, batch_size=16, learning_rate=0.05)
    samples = _toy_samples(rng, 60, spec)
    model = models.build_model(spec, seed=4)
    cfg = training.TrainConfig(max_epochs=20, patience=20, seed=4)
    history = training.fit(model, samples[:45], samples[45:], cfg)
    assert history.best_val == min(r.val_loss for r in history.epochs)


def test_early_stopping_never_fires_before_patience():
    rng = np.random.default_rng(8)
    spec = models.default_spec("MLP", hidden=8, window=4, batch_size=16)
    samples = _toy_samples(rng, 40, spec)
    model = models.build_model(spec, seed=5)
    cfg = training.TrainConfig(max_epochs=100, patience=7, seed=5)
    history = training.fit(model, samples[:30], samples[30:], cfg)
    assert history.stopped_epoch >= min(8, cfg.max_epochs)


def test_empty_training_set_rejected():
    model = models.build_model("MLP", seed=0)
    opt = training.OptimizerState.for_params(model.params)
    with pytest.raises(ConfigError):
        training.train_epoch(model, [], opt, training.TrainConfig(), 0)
    with pytest.raises(ConfigError):
        training.fit(model, [], [], training.TrainConfig())


def test_trace_collects_phases_and_spikes():
    rng = np.random.default_rng(9)
    spec = models.default_spec("Leaky", hidden=12, window=4, timesteps=3, batch_size=16, theta=0.05)
    samples = _toy_samples(rng, 30, spec)
    model = models.build_model(spec, seed=0)
    cfg = training.TrainConfig(max_epochs=2, patience=None, seed=0)
    history = training.fit(model, samples[:20], samples[20:], cfg)
    phases = [e.phase for e in history.trace.entries]
    assert phases == ["train", "eval", "train", "eval"]
    assert history.trace.entries[0].samples == 20
    assert history.trace.entries[1].samples == 10
    assert history.trace.entries[0].spike_counts.get("hidden_spikes", 0) > 0


def test_history_export_lines():
    h = training.History()
    h.epochs.append(training.EpochRecord(0.5, 0.4))
    h.stopped_epoch = 1
    h.best_val = 0.4
    lines = h.to_lines()
    assert lines[0] == "epoch=1 train_loss=0.5 val_loss=0.4"
    assert lines[-1] == "stopped_epoch=1 best_val=0.4"
