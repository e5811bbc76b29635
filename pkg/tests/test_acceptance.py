"""Acceptance suite: one test per criterion, each printing a PASS line.

Numbered criteria:
 1  neuron-dynamics oracle equivalence (1e-12, < 5 s)
 2  reset contracts, zero tolerance
 3  gradient checks for primitives and all models (<= 1e-4, < 60 s)
 4  echo-state property and its high-radius contrast case
 5  federated algebra (exactness and bit-exact single-client equivalence)
 6  metrics against a brute-force oracle (1e-12)
 7  sustainability index identities and monotonicity
 8  event-driven SNN energy below dense MLP energy; Alpha above Leaky
 9  timestep-sweep shape: best T < 50 on 3/3 seeds (< 15 min)
 10 end-to-end determinism of the experiment driver
"""

import time

import numpy as np
import pytest
import yaml

from oracles import oracle_metrics, oracle_neuron_step, oracle_zero_state
from spikecast import autodiff as ad
from spikecast import cli, esn, federated, models, neurons, training
from spikecast.data import SyntheticSpec, WindowedSample, build_splits, generate_synthetic
from spikecast.evaluation import (
    EnergyModel,
    SustainabilityInputs,
    estimate_energy,
    metrics,
    sustainability_index,
)

TIMESTEP_GRID = (1, 7, 10, 50, 70, 100)


def _report(criterion, label):
    print(f"ACCEPTANCE {criterion} ({label}): PASS")


def _random_params(kind, rng):
    beta = float(rng.uniform(0.05, 0.95))
    if kind == "Alpha":
        alpha = float(rng.uniform(beta + 0.01, 0.995))
    else:
        alpha = float(rng.uniform(0.05, 0.95))
    resistance = float(rng.uniform(0.5, 3.0))
    capacitance = float(rng.uniform(1.1, 6.0)) / min(resistance, 1.0)  # keep R*C > 1
    return neurons.NeuronParams(
        kind=kind,
        theta=float(rng.uniform(0.2, 2.0)),
        beta=beta,
        alpha=alpha,
        R=resistance,
        C=capacitance,
        v_scale=float(rng.uniform(0.0, 2.0)),
    )


def _seed_state(kind, rng):
    values = {"U": float(rng.uniform(-2, 2))}
    if kind == "Synaptic":
        values["I_syn"] = float(rng.uniform(-1, 1))
    if kind == "Alpha":
        values["I_exc"] = float(rng.uniform(-1, 1))
        values["I_inh"] = float(rng.uniform(-1, 1))
    if kind == "RLeaky":
        values["last_spike"] = float(rng.integers(0, 2))
    return values


def _tensorize(kind, params, values):
    state = neurons.init_state(params, (1,))
    state.U = ad.Tensor([values["U"]])
    if kind == "Synaptic":
        state.I_syn = ad.Tensor([values["I_syn"]])
    if kind == "Alpha":
        state.I_exc = ad.Tensor([values["I_exc"]])
        state.I_inh = ad.Tensor([values["I_inh"]])
    if kind == "RLeaky":
        state.last_spike = ad.Tensor([values["last_spike"]])
    return state


def test_criterion_1_neuron_oracle_equivalence():
    started = time.perf_counter()
    for kind in neurons.NEURON_KINDS:
        rng = np.random.default_rng(sum(map(ord, kind)))
        for _ in range(1000):
            params = _random_params(kind, rng)
            values = _seed_state(kind, rng)
            drive = float(rng.uniform(-2, 3))
            state = _tensorize(kind, params, values)
            p_dict = {
                "R": params.R,
                "C": params.C,
                "beta": params.beta,
                "alpha": params.alpha,
                "V": params.v_scale,
                "theta": params.theta,
            }
            oracle = oracle_zero_state(kind)
            oracle.update(values)
            want_state, want_spike = oracle_neuron_step(kind, oracle, drive, p_dict)
            got_state, got_spikes = neurons.step(state, ad.Tensor([drive]), params)
            assert abs(float(got_state.U.data[0]) - want_state["U"]) < 1e-12
            assert float(got_spikes.data[0]) == want_spike

    # Closed forms over 100 steps.
    leaky = neurons.NeuronParams(kind="Leaky", beta=0.9, theta=1e9)
    state = neurons.init_state(leaky, (1,))
    one = ad.Tensor([1.0])
    for t in range(1, 101):
        state, _ = neurons.leaky_step(state, one, leaky)
        assert abs(float(state.U.data[0]) - (1.0 - 0.9**t)) < 1e-12

    lap = neurons.NeuronParams(kind="Lapicque", R=1.0, C=4.0, theta=1e9)
    decay = 1.0 - 1.0 / 4.0
    state = neurons.init_state(lap, (1,))
    state.U = ad.Tensor([2.0])
    zero = ad.Tensor([0.0])
    for t in range(1, 101):
        state, _ = neurons.lapicque_step(state, zero, lap)
        assert abs(float(state.U.data[0]) - 2.0 * decay**t) < 1e-12

    elapsed = time.perf_counter() - started
    assert elapsed < 5.0, f"criterion 1 took {elapsed:.1f}s"
    _report(1, "neuron-dynamics oracle equivalence")


def test_criterion_2_reset_contracts():
    total_steps = 0
    for kind in neurons.NEURON_KINDS:
        rng = np.random.default_rng(len(kind))
        width = 50
        hidden = _random_params(kind, rng)
        silenced = neurons.NeuronParams(
            kind=kind,
            theta=1e9,
            beta=hidden.beta,
            alpha=hidden.alpha,
            R=hidden.R,
            C=hidden.C,
            v_scale=hidden.v_scale,
        )
        h_state = neurons.init_state(hidden, (width,))
        s_state = neurons.init_state(silenced, (width,))
        for _ in range(200):
            drive = ad.Tensor(rng.uniform(-1, 4, size=width))
            # The silenced twin never crosses threshold, exposing the
            # pre-reset potential through the production arithmetic.
            s_next, s_spikes = neurons.step(s_state, drive, silenced)
            h_state, spikes = neurons.step(h_state, drive, hidden)
            pre = s_next.U.data
            fired = spikes.data == 1.0
            assert np.array_equal(h_state.U.data[fired], (pre - hidden.theta)[fired])
            assert np.array_equal(h_state.U.data[~fired], pre[~fired])
            assert np.all(pre[fired] >= hidden.theta)
            total_steps += width
            # Re-sync the silenced twin to the post-reset trajectory.
            s_state = neurons.init_state(silenced, (width,))
            s_state.U = ad.Tensor(h_state.U.data.copy())
            if kind == "Synaptic":
                s_state.I_syn = ad.Tensor(h_state.I_syn.data.copy())
            if kind == "Alpha":
                s_state.I_exc = ad.Tensor(h_state.I_exc.data.copy())
                s_state.I_inh = ad.Tensor(h_state.I_inh.data.copy())
            if kind == "RLeaky":
                s_state.last_spike = ad.Tensor(h_state.last_spike.data.copy())
            _ = s_spikes
    assert total_steps >= 10_000

    # Output layers integrate freely: no reset ever changes the potential.
    for kind in neurons.NEURON_KINDS:
        rng = np.random.default_rng(100 + len(kind))
        out_params = neurons.NeuronParams(
            kind=kind,
            theta=0.05,
            reset="none",
            beta=0.9 if kind != "Alpha" else 0.8,
            alpha=0.5 if kind != "Alpha" else 0.9,
            R=1.0,
            C=5.0,
        )
        ref_params = neurons.NeuronParams(
            kind=kind,
            theta=1e9,
            reset="subtract",
            beta=out_params.beta,
            alpha=out_params.alpha,
            R=1.0,
            C=5.0,
        )
        out_state = neurons.init_state(out_params, (20,))
        ref_state = neurons.init_state(ref_params, (20,))
        for _ in range(100):
            drive = ad.Tensor(rng.uniform(0, 3, size=20))
            out_state, out_spikes = neurons.step(out_state, drive, out_params)
            ref_state, _ = neurons.step(ref_state, drive, ref_params)
            assert out_spikes is None
            assert np.array_equal(out_state.U.data, ref_state.U.data)
        assert np.any(out_state.U.data > out_params.theta)
    _report(2, "reset contracts")


def _model_grad_error(name, seed, eps):
    kw = dict(window=3, n_features=4, n_targets=2, hidden=6)
    if name == "CNN":
        kw = dict(window=4, n_features=4, n_targets=2, hidden=8)
    if name == "ESN":
        kw = dict(window=3, n_features=4, n_targets=2, hidden=12)
    if name in neurons.NEURON_KINDS:
        kw["timesteps"] = 3
        kw["theta"] = 0.4
    model = models.build_model(name, seed=seed, **kw)
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 1, size=(2, model.spec.window, model.spec.n_features))
    y = ad.Tensor(rng.uniform(0, 1, size=(2, model.spec.n_targets)))
    smooth = model.spec.is_snn

    def f():
        return ad.mse_loss(model.forward(x, smooth_spikes=smooth), y)

    return ad.grad_check(
        f, model.params, eps=eps, rng=np.random.default_rng(seed + 7), max_elements=25
    )


def test_criterion_3_gradient_checks():
    started = time.perf_counter()

    for seed in (0, 1, 2):
        rng = np.random.default_rng(seed)
        a = ad.Tensor(rng.normal(size=(4, 4)), requires_grad=True)
        b = ad.Tensor(rng.normal(size=(4, 4)), requires_grad=True)
        u = ad.Tensor(rng.normal(size=(16,)), requires_grad=True)
        img = ad.Tensor(rng.normal(size=(2, 2, 4, 4)), requires_grad=True)
        kern = ad.Tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
        target = ad.Tensor(rng.normal(size=(4, 4)))
        primitives = [
            (lambda: ad.mean(ad.add(a, b)), {"a": a, "b": b}, 1e-4),
            (lambda: ad.mean(ad.subtract(a, b)), {"a": a, "b": b}, 1e-4),
            (lambda: ad.mean(ad.multiply(a, b)), {"a": a, "b": b}, 1e-4),
            (lambda: ad.mean(ad.matmul(a, b)), {"a": a, "b": b}, 1e-4),
            (lambda: ad.mean(ad.tanh(a)), {"a": a}, 1e-4),
            (lambda: ad.mean(ad.relu(a)), {"a": a}, 1e-6),
            (lambda: ad.mean(ad.flatten(a)), {"a": a}, 1e-4),
            (lambda: ad.mse_loss(a, target), {"a": a}, 1e-4),
            (lambda: ad.mean(ad.conv2d(img, kern, padding=1)), {"i": img, "k": kern}, 1e-6),
            (lambda: ad.mean(ad.avg_pool2d(img, 2)), {"i": img}, 1e-4),
            (lambda: ad.mean(ad.spike_threshold(u, 0.1, smooth=True)), {"u": u}, 1e-5),
        ]
        for f, params, eps in primitives:
            assert ad.grad_check(f, params, eps=eps) < 1e-4

    # relu and conv feed relu stacks: a smaller step keeps central
    # differences off the kinks; the spike models are checked on their
    # smooth surrogate forward.
    eps_by_model = {"MLP": 1e-6, "CNN": 1e-6, "RNN": 1e-6, "ESN": 1e-4}
    for name in models.MODEL_NAMES:
        eps = eps_by_model.get(name, 1e-5)
        for seed in (0, 1, 2):
            err = _model_grad_error(name, seed, eps)
            assert err < 1e-4, f"{name} seed {seed}: {err}"

    elapsed = time.perf_counter() - started
    assert elapsed < 60.0, f"criterion 3 took {elapsed:.1f}s"
    _report(3, "gradient checks")


def _reservoir_distance(rho, seed):
    reservoir = esn.esn_init(
        seed=seed, n_reservoir=128, rho_target=rho, input_scale=0.1, n_inputs=11
    )
    rng = np.random.default_rng(seed + 100)
    inputs = rng.uniform(0, 1, size=(200, 11))
    a = rng.uniform(-1, 1, size=128)
    b = rng.uniform(-1, 1, size=128)
    for t in range(200):
        a = esn.esn_step(reservoir, a, inputs[t])
        b = esn.esn_step(reservoir, b, inputs[t])
    return float(np.linalg.norm(a - b))


def test_criterion_4_echo_state_property():
    contracting = [_reservoir_distance(0.9, seed) for seed in range(5)]
    assert all(d < 1e-3 for d in contracting), contracting
    expanding = [_reservoir_distance(1.5, seed) for seed in range(5)]
    assert any(d >= 1e-3 for d in expanding), expanding
    _report(4, "echo-state property")


def _linear_toy(seed, n_train, n_val, spec):
    rng = np.random.default_rng(seed)
    w = rng.uniform(-0.5, 0.5, size=(spec.window * spec.n_features, spec.n_targets))
    xs = rng.uniform(0, 1, size=(n_train + n_val, spec.window, spec.n_features))
    ys = xs.reshape(len(xs), -1) @ w
    samples = [WindowedSample(x=xs[i], y=ys[i]) for i in range(len(xs))]
    return samples[:n_train], samples[n_train:]


def test_criterion_5_federated_algebra():
    rng = np.random.default_rng(0)
    updates = [
        ({"a": rng.normal(size=(6, 2)), "b": rng.normal(size=(2,))}, int(n))
        for n in rng.integers(1, 30, size=4)
    ]
    merged = federated.fedavg(updates)
    for perm_seed in range(3):
        order = np.random.default_rng(perm_seed).permutation(len(updates))
        shuffled = federated.fedavg([updates[i] for i in order])
        for k in merged:
            assert np.allclose(merged[k], shuffled[k], atol=1e-12)

    same = {"w": rng.normal(size=(5,))}
    identical = federated.fedavg([(dict(same), 2), (dict(same), 7)])
    assert np.allclose(identical["w"], same["w"], atol=1e-15)
    solo = federated.fedavg([({"w": same["w"].copy()}, 11)])
    assert np.array_equal(solo["w"], same["w"])

    spec = models.default_spec("MLP", hidden=16, window=10, batch_size=64)
    train, val = _linear_toy(100, 120, 40, spec)
    rounds, local = 4, 2
    client = federated.ClientState(client_id="solo", train=train, val=val, test=val)
    round_cfg = federated.RoundConfig(rounds=rounds, local_epochs=local, patience_rounds=None)
    train_cfg = training.TrainConfig(max_epochs=rounds * local, patience=None, seed=11)
    fed_model, fed_history, ledger = federated.run_federated(
        [client], spec, round_cfg, train_cfg
    )
    central = models.build_model(spec, seed=11)
    central_history = training.fit(central, train, val, train_cfg)
    vals = [r.val_loss for r in central_history.epochs]
    assert all(b < a for a, b in zip(vals, vals[1:]))  # best = final on both paths
    for k, v in central.get_weights().items():
        assert np.array_equal(fed_model.get_weights()[k], v)

    params = fed_model.parameter_count()
    assert ledger.total_bytes == rounds * 1 * 2 * params * 8
    _ = fed_history
    _report(5, "federated algebra")


def test_criterion_6_metrics_oracle():
    rep = metrics(np.array([[2.0], [2.0]]), np.array([[1.0], [3.0]]))
    assert rep.nrmse == 0.5

    rng = np.random.default_rng(6)
    for _ in range(100):
        pred = rng.normal(loc=3.0, scale=2.0, size=(100, 5))
        act = rng.normal(loc=3.0, scale=2.0, size=(100, 5))
        got = metrics(pred, act)
        want = oracle_metrics(pred.tolist(), act.tolist())
        assert abs(got.nrmse - want["nrmse"]) < 1e-12
        assert abs(got.mae - want["mae"]) < 1e-12
        assert abs(got.rmse - want["rmse"]) < 1e-12
        assert abs(got.mse - want["mse"]) < 1e-12
    _report(6, "metrics oracle")


def test_criterion_7_sustainability_index():
    assert sustainability_index(SustainabilityInputs(0.0, 0.0, 0.0)) == 1.0
    cube = sustainability_index(
        SustainabilityInputs(1.0, 1.0, 1.0, a=1 / 3, b=1 / 3, c=1 / 3)
    )
    assert abs(cube - 2.0) < 1e-12

    rng = np.random.default_rng(7)
    for _ in range(1000):
        e, c, d = (float(v) for v in rng.uniform(0, 10, size=3))
        bump = float(rng.uniform(1e-3, 2.0))
        base = sustainability_index(SustainabilityInputs(e, c, d))
        assert sustainability_index(SustainabilityInputs(e + bump, c, d)) > base
        assert sustainability_index(SustainabilityInputs(e, c + bump, d)) > base
        assert sustainability_index(SustainabilityInputs(e, c, d + bump)) > base
    _report(7, "sustainability index")


def _energy_stations():
    stations = []
    for i, (name, base, amp, noise) in enumerate(cli.DEFAULT_STATIONS):
        stations.append(
            generate_synthetic(
                SyntheticSpec(
                    n_days=1,
                    interval_seconds=600,
                    base_load=base,
                    daily_amplitude=amp,
                    noise_std=noise,
                    seed=1000 + i,
                    station_id=name,
                )
            )
        )
    return build_splits(stations, 10)


def _trained_energy(dataset, name, seed, mode, epochs=3):
    spec = models.default_spec(name, timesteps=7)
    model = models.build_model(spec, seed)
    cfg = training.TrainConfig(max_epochs=epochs, patience=None, seed=seed)
    history = training.fit(model, dataset.train, dataset.val, cfg)
    return estimate_energy(spec, history.trace, EnergyModel(mode=mode))


def test_criterion_8_energy_ordering():
    dataset = _energy_stations()
    for seed in (0, 1, 2):
        leaky = _trained_energy(dataset, "Leaky", seed, "event-driven")
        mlp = _trained_energy(dataset, "MLP", seed, "analytic")
        alpha = _trained_energy(dataset, "Alpha", seed, "event-driven")
        assert leaky < mlp, f"seed {seed}: {leaky} !< {mlp}"
        assert alpha > leaky, f"seed {seed}: {alpha} !> {leaky}"
    _report(8, "energy ordering")


def test_criterion_9_timestep_sweep_shape():
    started = time.perf_counter()
    stations = []
    for i, (name, base, amp, noise) in enumerate(cli.DEFAULT_STATIONS):
        stations.append(
            generate_synthetic(
                SyntheticSpec(
                    n_days=2,
                    interval_seconds=600,
                    base_load=base,
                    daily_amplitude=amp,
                    noise_std=noise,
                    seed=1000 + i,
                    station_id=name,
                )
            )
        )
    dataset = build_splits(stations, 10)
    for seed in (0, 1, 2):
        losses = {}
        for t in TIMESTEP_GRID:
            spec = models.default_spec("Leaky", timesteps=t)
            model = models.build_model(spec, seed)
            cfg = training.TrainConfig(max_epochs=80, patience=None, seed=seed)
            training.fit(model, dataset.train, dataset.val, cfg)
            losses[t] = training.evaluate_loss(model, dataset.test)
        best = min(losses, key=losses.get)
        assert best < 50, f"seed {seed}: best T = {best} ({losses})"
    elapsed = time.perf_counter() - started
    assert elapsed < 15 * 60, f"criterion 9 took {elapsed:.0f}s"
    _report(9, "timestep-sweep shape")


def test_criterion_10_end_to_end_determinism(tmp_path):
    raw = {
        "data": {"source": "synthetic", "window": 10, "synthetic": {"n_days": 1, "seed": 3}},
        "models": ["Leaky", "MLP"],
        "settings": ["centralized", "federated"],
        "timesteps": [7],
        "seeds": [0],
        "training": {"max_epochs": 2, "patience": None},
        "federated": {"rounds": 2, "local_epochs": 1, "patience_rounds": None},
        "output_dir": str(tmp_path),
    }
    cfg = cli.parse_config(yaml.safe_load(yaml.safe_dump(raw)))
    first = cli.cmd_run(cfg)
    second = cli.cmd_run(cfg)
    assert not first.errors and not second.errors
    assert first.to_json() == second.to_json()
    _report(10, "end-to-end determinism")
