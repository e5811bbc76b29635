"""Batch experiment driver: run the model grid and emit result tables.

Subcommands:
  generate-data   write synthetic station CSVs
  run             execute the (seed x model x setting x timesteps) grid
  sweep-timesteps restricted centralized run emitting the timestep-sweep file
  report          render tables and plot data from a saved bundle

Configs are strict YAML: unknown keys are rejected so a run is fully
described by its file. The bundle written by ``run`` carries a config
hash and the seeds, which is enough to reproduce every run bit-exactly.
"""

import argparse
import concurrent.futures
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .data import (
    SyntheticSpec,
    build_splits,
    generate_synthetic,
    load_csv,
    write_csv,
)
from .errors import ConfigError, SpikecastError
from .evaluation import (
    EnergyModel,
    RunReport,
    SustainabilityInputs,
    estimate_energy,
    metrics,
    sustainability_index,
)
from .federated import ClientState, RoundConfig, run_federated
from .models import BASELINE_ARCHS, MODEL_NAMES, build_model, default_spec
from .neurons import NEURON_KINDS
from .training import TrainConfig, fit, predict
from .data import denormalize_targets, N_FEATURES

DEFAULT_TIMESTEPS = (1, 7, 10, 50, 70, 100)

# Three synthetic presets with distinct load profiles (non-IID stand-in).
DEFAULT_STATIONS = (
    ("lescorts", (20.0, 8.0, 30.0, 12.0, 18.0), (10.0, 4.0, 15.0, 6.0, 9.0), (2.0, 1.0, 3.0, 1.5, 2.0)),
    ("poblesec", (35.0, 15.0, 60.0, 20.0, 30.0), (18.0, 7.0, 30.0, 9.0, 14.0), (3.0, 1.5, 5.0, 2.0, 3.0)),
    ("elborn", (12.0, 5.0, 18.0, 8.0, 10.0), (6.0, 2.5, 9.0, 4.0, 5.0), (1.5, 0.8, 2.0, 1.0, 1.5)),
)


def _take(mapping, where, **fields):
    """Pull known keys out of a config dict; reject whatever is left."""
    if mapping is None:
        mapping = {}
    if not isinstance(mapping, dict):
        raise ConfigError(f"{where}: expected a mapping")
    unknown = set(mapping) - set(fields)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    return {k: mapping.get(k, default) for k, default in fields.items()}


@dataclass(frozen=True)
class StationConfig:
    station_id: str
    n_days: int
    base_load: tuple
    daily_amplitude: tuple
    noise_std: tuple


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"
    csv_paths: tuple = ()
    window: int = 10
    ratios: tuple = (0.6, 0.2, 0.2)
    interval_seconds: int = 120
    seed: int = 1
    stations: tuple = ()


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig
    models: tuple
    settings: tuple
    timesteps: tuple
    seeds: tuple
    max_epochs: int
    patience: int | None
    rounds: int
    local_epochs: int
    patience_rounds: int | None
    energy: EnergyModel
    exponents: tuple
    output_dir: str
    workers: int


def parse_config(raw):
    """Validate a parsed YAML mapping into an ExperimentConfig."""
    top = _take(
        raw,
        "config",
        data=None,
        models=["Leaky", "MLP"],
        settings=["centralized"],
        timesteps=list(DEFAULT_TIMESTEPS),
        seeds=[0],
        training=None,
        federated=None,
        energy=None,
        sustainability=None,
        output_dir="out",
        workers=1,
    )

    d = _take(
        top["data"],
        "data",
        source="synthetic",
        csv_paths=[],
        window=10,
        ratios=[0.6, 0.2, 0.2],
        synthetic=None,
    )
    if d["source"] not in ("synthetic", "csv"):
        raise ConfigError(f"data.source must be synthetic or csv, got {d['source']!r}")
    syn = _take(
        d["synthetic"],
        "data.synthetic",
        n_days=2,
        interval_seconds=120,
        seed=1,
        stations=None,
    )
    stations = []
    if syn["stations"] is None:
        for name, base, amp, noise in DEFAULT_STATIONS:
            stations.append(StationConfig(name, int(syn["n_days"]), base, amp, noise))
    else:
        for i, st in enumerate(syn["stations"]):
            parsed = _take(
                st,
                f"data.synthetic.stations[{i}]",
                station_id=f"station{i}",
                n_days=syn["n_days"],
                base_load=DEFAULT_STATIONS[i % 3][1],
                daily_amplitude=DEFAULT_STATIONS[i % 3][2],
                noise_std=DEFAULT_STATIONS[i % 3][3],
            )
            stations.append(
                StationConfig(
                    str(parsed["station_id"]),
                    int(parsed["n_days"]),
                    tuple(float(v) for v in parsed["base_load"]),
                    tuple(float(v) for v in parsed["daily_amplitude"]),
                    tuple(float(v) for v in parsed["noise_std"]),
                )
            )
    if d["source"] == "synthetic" and not stations:
        raise ConfigError("synthetic source needs at least one station")
    if d["source"] == "csv" and not d["csv_paths"]:
        raise ConfigError("csv source needs csv_paths")
    data_cfg = DataConfig(
        source=d["source"],
        csv_paths=tuple(str(p) for p in d["csv_paths"]),
        window=int(d["window"]),
        ratios=tuple(float(r) for r in d["ratios"]),
        interval_seconds=int(syn["interval_seconds"]),
        seed=int(syn["seed"]),
        stations=tuple(stations),
    )

    models = tuple(top["models"])
    for m in models:
        if m not in MODEL_NAMES:
            raise ConfigError(f"unknown model {m!r}; choose from {MODEL_NAMES}")
    if not models:
        raise ConfigError("at least one model is required")
    settings = tuple(top["settings"])
    for s in settings:
        if s not in ("centralized", "federated"):
            raise ConfigError(f"unknown setting {s!r}")
    if not settings:
        raise ConfigError("at least one setting is required")

    tr = _take(top["training"], "training", max_epochs=150, patience=50)
    fed = _take(top["federated"], "federated", rounds=50, local_epochs=3, patience_rounds=17)
    en = _take(
        top["energy"],
        "energy",
        mode="event-driven",
        j_per_mac=4.6e-12,
        j_per_neuron_update=1e-12,
        device_watts=15.0,
    )
    sus = _take(top["sustainability"], "sustainability", a=0.33, b=0.33, c=0.33)

    return ExperimentConfig(
        data=data_cfg,
        models=models,
        settings=settings,
        timesteps=tuple(int(t) for t in top["timesteps"]),
        seeds=tuple(int(s) for s in top["seeds"]),
        max_epochs=int(tr["max_epochs"]),
        patience=None if tr["patience"] is None else int(tr["patience"]),
        rounds=int(fed["rounds"]),
        local_epochs=int(fed["local_epochs"]),
        patience_rounds=None if fed["patience_rounds"] is None else int(fed["patience_rounds"]),
        energy=EnergyModel(
            mode=str(en["mode"]),
            j_per_mac=float(en["j_per_mac"]),
            j_per_neuron_update=float(en["j_per_neuron_update"]),
            device_watts=float(en["device_watts"]),
        ),
        exponents=(float(sus["a"]), float(sus["b"]), float(sus["c"])),
        output_dir=str(top["output_dir"]),
        workers=int(top["workers"]),
    )


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if raw is None:
        raw = {}
    return parse_config(raw)


def config_hash(cfg):
    """Stable hash over every field that influences results."""
    payload = {
        "data": {
            "source": cfg.data.source,
            "csv_paths": list(cfg.data.csv_paths),
            "window": cfg.data.window,
            "ratios": list(cfg.data.ratios),
            "interval_seconds": cfg.data.interval_seconds,
            "seed": cfg.data.seed,
            "stations": [
                [s.station_id, s.n_days, list(s.base_load), list(s.daily_amplitude), list(s.noise_std)]
                for s in cfg.data.stations
            ],
        },
        "models": list(cfg.models),
        "settings": list(cfg.settings),
        "timesteps": list(cfg.timesteps),
        "seeds": list(cfg.seeds),
        "training": [cfg.max_epochs, cfg.patience],
        "federated": [cfg.rounds, cfg.local_epochs, cfg.patience_rounds],
        "energy": [
            cfg.energy.mode,
            cfg.energy.j_per_mac,
            cfg.energy.j_per_neuron_update,
            cfg.energy.device_watts,
        ],
        "exponents": list(cfg.exponents),
    }
    blob = json.dumps(payload, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def resolve_stations(cfg):
    """Load or generate the station series the config describes."""
    if cfg.data.source == "csv":
        return [load_csv(p) for p in cfg.data.csv_paths]
    series = []
    for i, st in enumerate(cfg.data.stations):
        spec = SyntheticSpec(
            n_days=st.n_days,
            interval_seconds=cfg.data.interval_seconds,
            base_load=st.base_load,
            daily_amplitude=st.daily_amplitude,
            noise_std=st.noise_std,
            seed=cfg.data.seed * 1000 + i,
            station_id=st.station_id,
        )
        series.append(generate_synthetic(spec))
    return series


@dataclass
class ResultsBundle:
    """Every run of a grid plus the provenance needed to reproduce it."""

    provenance: dict
    runs: list = field(default_factory=list)
    errors: list = field(default_factory=list)

    def to_json(self):
        payload = {
            "provenance": self.provenance,
            "runs": [r.to_record() for r in self.runs],
            "errors": self.errors,
        }
        return json.dumps(payload, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text):
        payload = json.loads(text)
        bundle = cls(provenance=payload["provenance"])
        bundle.runs = [RunReport.from_record(r) for r in payload["runs"]]
        bundle.errors = payload["errors"]
        return bundle


def _grid_cells(cfg):
    cells = []
    for seed in cfg.seeds:
        for model_name in cfg.models:
            for setting in cfg.settings:
                if model_name in NEURON_KINDS:
                    for t in cfg.timesteps:
                        cells.append((seed, model_name, setting, t))
                else:
                    # Baselines ignore the timestep sweep: one run each.
                    cells.append((seed, model_name, setting, None))
    return cells


def _pooled_test_eval(model, clients):
    """Evaluate one model on every client's test set, pooled on the original scale."""
    preds, actuals, losses, sizes = [], [], [], []
    for c in sorted(clients, key=lambda c: c.client_id):
        p = predict(model, c.test)
        _, ys = _stack_y(c.test)
        losses.append(float(np.mean((p - ys) ** 2)))
        sizes.append(len(c.test))
        preds.append(denormalize_targets(c.stats, p))
        actuals.append(denormalize_targets(c.stats, ys))
    pooled_pred = np.concatenate(preds, axis=0)
    pooled_act = np.concatenate(actuals, axis=0)
    test_loss = float(np.average(losses, weights=sizes))
    return pooled_pred, pooled_act, test_loss


def _stack_y(samples):
    ys = np.stack([s.y for s in samples])
    return None, ys


def _run_cell(cell, cfg, dataset, station_splits):
    seed, model_name, setting, t_steps = cell
    overrides = {"window": cfg.data.window}
    if t_steps is not None:
        overrides["timesteps"] = t_steps
    spec = default_spec(model_name, **overrides)
    train_cfg = TrainConfig(
        max_epochs=cfg.max_epochs,
        patience=cfg.patience,
        seed=seed,
    )
    a, b, c = cfg.exponents

    if setting == "centralized":
        model = build_model(spec, seed)
        history = fit(model, dataset.train, dataset.val, train_cfg)
        test_pred = predict(model, dataset.test)
        _, test_y = _stack_y(dataset.test)
        test_loss = float(np.mean((test_pred - test_y) ** 2))
        rep = metrics(
            denormalize_targets(dataset.stats, test_pred),
            denormalize_targets(dataset.stats, test_y),
        )
        val_pred = predict(model, dataset.val)
        _, val_y = _stack_y(dataset.val)
        val_rep = metrics(
            denormalize_targets(dataset.stats, val_pred),
            denormalize_targets(dataset.stats, val_y),
        )
        d_mb = dataset.raw_rows * N_FEATURES * 8 / 1e6
        trace = history.trace
    else:
        clients = [
            ClientState(client_id=cid, train=ds.train, val=ds.val, test=ds.test, stats=ds.stats)
            for cid, ds in station_splits
        ]
        round_cfg = RoundConfig(
            rounds=cfg.rounds,
            local_epochs=cfg.local_epochs,
            patience_rounds=cfg.patience_rounds,
        )
        model, history, ledger = run_federated(clients, spec, round_cfg, train_cfg)
        pooled_pred, pooled_act, test_loss = _pooled_test_eval(model, clients)
        rep = metrics(pooled_pred, pooled_act)
        val_parts_p, val_parts_y = [], []
        for cl in sorted(clients, key=lambda c: c.client_id):
            vp = predict(model, cl.val)
            _, vy = _stack_y(cl.val)
            val_parts_p.append(denormalize_targets(cl.stats, vp))
            val_parts_y.append(denormalize_targets(cl.stats, vy))
        val_rep = metrics(np.concatenate(val_parts_p), np.concatenate(val_parts_y))
        d_mb = ledger.total_megabytes
        trace = history.trace

    energy_wh = estimate_energy(spec, trace, cfg.energy)
    s_value = sustainability_index(
        SustainabilityInputs(e_val=val_rep.nrmse, c_tr=energy_wh, d_mb=d_mb, a=a, b=b, c=c)
    )
    return RunReport(
        model=model_name,
        setting=setting,
        timesteps=t_steps,
        nrmse=rep.nrmse,
        mae=rep.mae,
        rmse=rep.rmse,
        mse=rep.mse,
        test_loss=test_loss,
        energy_wh=energy_wh,
        energy_mode=cfg.energy.mode,
        d_mb=d_mb,
        s_index=s_value,
        seed=seed,
    )


def cmd_run(cfg):
    """Execute the full grid; failures are recorded, not fatal."""
    stations = resolve_stations(cfg)
    dataset = None
    if "centralized" in cfg.settings:
        dataset = build_splits(stations, cfg.data.window, cfg.data.ratios)
    station_splits = None
    if "federated" in cfg.settings:
        station_splits = [
            (s.station_id, build_splits([s], cfg.data.window, cfg.data.ratios))
            for s in sorted(stations, key=lambda s: s.station_id)
        ]

    bundle = ResultsBundle(
        provenance={
            "config_hash": config_hash(cfg),
            "seeds": list(cfg.seeds),
            "artifact_version": __version__,
        }
    )
    cells = _grid_cells(cfg)

    def execute(cell):
        try:
            return cell, _run_cell(cell, cfg, dataset, station_splits), None
        except Exception as exc:  # noqa: BLE001 - grid cells fail independently
            return cell, None, f"{type(exc).__name__}: {exc}"

    if cfg.workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            outcomes = list(pool.map(execute, cells))
    else:
        outcomes = [execute(cell) for cell in cells]

    for cell, report, error in outcomes:
        if report is not None:
            bundle.runs.append(report)
        else:
            seed, model_name, setting, t_steps = cell
            bundle.errors.append(
                {"model": model_name, "setting": setting, "T": t_steps, "seed": seed, "error": error}
            )
    bundle.runs.sort(key=lambda r: (r.model, r.setting, r.timesteps or 0, r.seed))
    bundle.errors.sort(key=lambda e: (e["model"], e["setting"], e["T"] or 0, e["seed"]))
    return bundle


def _fmt(value, best=False):
    text = f"{value:.4g}"
    return f"**{text}**" if best else text


def _write_setting_table(runs, setting, out_dir, notices):
    rows = [r for r in runs if r.setting == setting]
    if not rows:
        notices.append(f"no {setting} runs in bundle; {setting} table omitted")
        return None
    table_rows = {}
    for r in rows:
        if r.model in BASELINE_ARCHS:
            table_rows.setdefault(r.model, {})["all"] = r
        elif r.timesteps in (7, 10):
            table_rows.setdefault(r.model, {})[r.timesteps] = r
    if not table_rows:
        notices.append(f"no {setting} runs at 7 or 10 timesteps; table omitted")
        return None

    def cell_value(model, key, attr):
        r = table_rows[model].get("all") or table_rows[model].get(key)
        return getattr(r, attr) if r is not None else None

    columns = [("NRMSE", "nrmse", 7), ("NRMSE", "nrmse", 10),
               ("Consumption (Wh)", "energy_wh", 7), ("Consumption (Wh)", "energy_wh", 10),
               ("S", "s_index", 7), ("S", "s_index", 10)]
    bests = {}
    for label, attr, key in columns:
        vals = [cell_value(m, key, attr) for m in table_rows]
        vals = [v for v in vals if v is not None]
        bests[(attr, key)] = min(vals) if vals else None

    lines = [
        f"# {setting.capitalize()} results: NRMSE, energy and sustainability",
        "",
        "| Model | NRMSE (7 spk) | NRMSE (10 spk) | Wh (7 spk) | Wh (10 spk) | S (7 spk) | S (10 spk) |",
        "|---|---|---|---|---|---|---|",
    ]
    for model in sorted(table_rows):
        cells = [model]
        for label, attr, key in columns:
            v = cell_value(model, key, attr)
            if v is None:
                cells.append("-")
            else:
                cells.append(_fmt(v, best=(v == bests[(attr, key)])))
        lines.append("| " + " | ".join(cells) + " |")
    path = Path(out_dir) / f"{setting}_table.md"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def cmd_report(bundle, out_dir):
    """Emit tables and plot data from a bundle; never retrains."""
    if not bundle.runs:
        raise SpikecastError("cannot report on an empty bundle")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    notices = []
    written = []
    for setting in ("centralized", "federated"):
        path = _write_setting_table(bundle.runs, setting, out, notices)
        if path is not None:
            written.append(path)

    sweep_rows = [r for r in bundle.runs if r.timesteps is not None]
    sweep_path = out / "timestep_sweep.csv"
    with open(sweep_path, "w", encoding="utf-8") as fh:
        fh.write("model,setting,T,seed,test_loss\n")
        for r in sorted(sweep_rows, key=lambda r: (r.model, r.setting, r.timesteps, r.seed)):
            fh.write(f"{r.model},{r.setting},{r.timesteps},{r.seed},{r.test_loss!r}\n")
    written.append(sweep_path)

    scatter_path = out / "energy_vs_nrmse.csv"
    with open(scatter_path, "w", encoding="utf-8") as fh:
        fh.write("model,setting,T,seed,nrmse,energy_wh,S\n")
        for r in bundle.runs:
            t = "" if r.timesteps is None else r.timesteps
            fh.write(
                f"{r.model},{r.setting},{t},{r.seed},{r.nrmse!r},{r.energy_wh!r},{r.s_index!r}\n"
            )
    written.append(scatter_path)

    summary = out / "report_summary.txt"
    with open(summary, "w", encoding="utf-8") as fh:
        for p in written:
            fh.write(f"wrote {p.name}\n")
        for n in notices:
            fh.write(f"notice: {n}\n")
    for n in notices:
        print(f"notice: {n}")
    return written, notices


def cmd_generate_data(cfg, out_dir):
    """Write one CSV per configured synthetic station; seeded, idempotent."""
    if cfg.data.source != "synthetic":
        raise ConfigError("generate-data needs a synthetic data source")
    if not cfg.data.stations:
        raise ConfigError("no synthetic stations configured")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for series in resolve_stations(cfg):
        path = out / f"{series.station_id}.csv"
        write_csv(path, series)
        paths.append(path)
    return paths


def _restrict_for_sweep(cfg):
    snn_models = tuple(m for m in cfg.models if m in NEURON_KINDS)
    if not snn_models:
        raise ConfigError("sweep-timesteps needs at least one spiking model")
    return ExperimentConfig(
        data=cfg.data,
        models=snn_models,
        settings=("centralized",),
        timesteps=cfg.timesteps,
        seeds=cfg.seeds,
        max_epochs=cfg.max_epochs,
        patience=cfg.patience,
        rounds=cfg.rounds,
        local_epochs=cfg.local_epochs,
        patience_rounds=cfg.patience_rounds,
        energy=cfg.energy,
        exponents=cfg.exponents,
        output_dir=cfg.output_dir,
        workers=cfg.workers,
    )


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="spikecast",
        description="Forecasting and sustainability benchmark driver",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("generate-data", "run", "sweep-timesteps"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=int, default=None)
    p_report = sub.add_parser("report")
    p_report.add_argument("--config", default=None)
    p_report.add_argument("--bundle", default=None)
    p_report.add_argument("--out", default=None)
    args = parser.parse_args(argv)

    try:
        if args.command == "report":
            if args.bundle is None:
                if args.config is None:
                    raise ConfigError("report needs --bundle or --config")
                cfg = load_config(args.config)
                bundle_path = Path(cfg.output_dir) / "bundle.json"
            else:
                bundle_path = Path(args.bundle)
            out_dir = args.out or bundle_path.parent
            bundle = ResultsBundle.from_json(bundle_path.read_text(encoding="utf-8"))
            cmd_report(bundle, out_dir)
            return 0

        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = _with_overrides(cfg, seeds=(args.seed,))
        if args.workers is not None:
            cfg = _with_overrides(cfg, workers=args.workers)
        out_dir = Path(args.out or cfg.output_dir)

        if args.command == "generate-data":
            paths = cmd_generate_data(cfg, out_dir)
            for p in paths:
                print(f"wrote {p}")
            return 0

        if args.command == "sweep-timesteps":
            cfg = _restrict_for_sweep(cfg)
        bundle = cmd_run(cfg)
        out_dir.mkdir(parents=True, exist_ok=True)
        bundle_path = out_dir / "bundle.json"
        bundle_path.write_text(bundle.to_json(), encoding="utf-8")
        print(f"wrote {bundle_path}")
        if args.command == "sweep-timesteps":
            sweep_rows = [r for r in bundle.runs if r.timesteps is not None]
            sweep_path = out_dir / "timestep_sweep.csv"
            with open(sweep_path, "w", encoding="utf-8") as fh:
                fh.write("model,setting,T,seed,test_loss\n")
                for r in sorted(sweep_rows, key=lambda r: (r.model, r.setting, r.timesteps, r.seed)):
                    fh.write(f"{r.model},{r.setting},{r.timesteps},{r.seed},{r.test_loss!r}\n")
            print(f"wrote {sweep_path}")
        else:
            cmd_report(bundle, out_dir)
        if bundle.errors:
            for e in bundle.errors:
                print(f"failed: {e}", file=sys.stderr)
            return 2
        return 0
    except SpikecastError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _with_overrides(cfg, **changes):
    from dataclasses import replace

    return replace(cfg, **changes)


if __name__ == "__main__":
    sys.exit(main())
