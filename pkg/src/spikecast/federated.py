"""Cross-silo federated simulation over the base stations.

Every round the server broadcasts the global weights, each client trains
a few local epochs on its own windows (raw samples never leave the
client), and the server aggregates the uploads with sample-weighted
FedAvg. Clients are stateful: their optimizer moments and epoch counter
persist across rounds, so a single-client run reproduces centralized
training exactly under matched seeds.
"""

from dataclasses import dataclass, field

import numpy as np

from .data import build_splits
from .errors import ConfigError, ContractError
from .models import build_model
from .training import (
    ComputeTrace,
    EpochRecord,
    History,
    OptimizerState,
    evaluate_loss,
    train_epoch,
)

BYTES_PER_WEIGHT = 8  # 64-bit floats on the wire


@dataclass
class RoundConfig:
    """Round budget; patience is measured in rounds."""

    rounds: int = 50
    local_epochs: int = 3
    patience_rounds: int | None = 17

    def __post_init__(self):
        if self.rounds < 1 or self.local_epochs < 1:
            raise ConfigError("rounds and local_epochs must be >= 1")
        if self.patience_rounds is not None and self.patience_rounds < 1:
            raise ConfigError("patience_rounds must be >= 1 (or None)")


@dataclass
class TransferRecord:
    round_index: int
    client_id: str
    direction: str  # "download" | "upload"
    n_bytes: int


@dataclass
class CommsLedger:
    """Bytes moved between server and clients, one record per transfer."""

    records: list = field(default_factory=list)

    def log(self, round_index, client_id, direction, n_bytes):
        self.records.append(TransferRecord(round_index, client_id, direction, n_bytes))

    @property
    def total_bytes(self):
        return sum(r.n_bytes for r in self.records)

    @property
    def total_megabytes(self):
        return self.total_bytes / 1e6


@dataclass
class ClientState:
    """One station's local data and training state."""

    client_id: str
    train: list
    val: list
    test: list
    stats: object = None
    n_samples: int = 0
    history: History = field(default_factory=History)
    model: object = None
    opt_state: object = None
    epochs_done: int = 0

    def __post_init__(self):
        self.n_samples = len(self.train)


class ClientTrainingError(ContractError):
    """Training failed on one client; carries the client id."""

    def __init__(self, client_id, cause):
        super().__init__(f"client {client_id!r}: {cause}")
        self.client_id = client_id


def partition_by_station(series_list, window, ratios=(0.6, 0.2, 0.2), target_idx=None):
    """One client per station; windowing/split/normalization stay local."""
    if not series_list:
        raise ConfigError("need at least one station")
    clients = []
    for series in series_list:
        kwargs = {} if target_idx is None else {"target_idx": target_idx}
        ds = build_splits([series], window, ratios, **kwargs)
        clients.append(
            ClientState(
                client_id=series.station_id,
                train=ds.train,
                val=ds.val,
                test=ds.test,
                stats=ds.stats,
            )
        )
    return clients


def fedavg(updates):
    """Sample-weighted elementwise mean of client weight dicts."""
    if not updates:
        raise ContractError("fedavg needs at least one update")
    names = set(updates[0][0])
    total = sum(n for _, n in updates)
    if total <= 0:
        raise ContractError("total sample count must be positive")
    for weights, _ in updates:
        if set(weights) != names:
            raise ContractError("client weight names differ")
        for k in names:
            if weights[k].shape != updates[0][0][k].shape:
                raise ContractError(f"client weight shapes differ for {k}")
    merged = {}
    for k in names:
        acc = np.zeros_like(updates[0][0][k])
        for weights, n in updates:
            acc += weights[k] * (n / total)
        merged[k] = acc
    return merged


def _weighted_mean(values, weights):
    total = sum(weights)
    return float(sum(v * w for v, w in zip(values, weights)) / total)


def run_federated(clients, spec, round_cfg, train_cfg):
    """Full-participation FedAvg rounds; returns (model, history, ledger).

    The global validation loss is the val-sample-weighted mean of the
    aggregated model's loss on each client's validation set; early
    stopping and best-weight restoration work at round granularity.
    Aggregation order is sorted by client id, so results are independent
    of scheduling.
    """

    live = [c for c in clients if c.train]
    if not live:
        raise ConfigError("need at least one client with training data")
    clients = sorted(live, key=lambda c: c.client_id)
    ledger = CommsLedger()
    history = History()

    global_model = build_model(spec, train_cfg.seed)
    global_weights = global_model.get_weights()
    weight_bytes = global_model.parameter_count() * BYTES_PER_WEIGHT

    for c in clients:
        c.model = build_model(spec, train_cfg.seed)
        c.opt_state = OptimizerState.for_params(c.model.params)
        c.epochs_done = 0
        c.history = History()

    best_val = float("inf")
    best_weights = {k: v.copy() for k, v in global_weights.items()}
    since_improved = 0

    for round_index in range(round_cfg.rounds):
        round_client_loss = {}
        for c in clients:
            c.model.set_weights(global_weights)
            ledger.log(round_index, c.client_id, "download", weight_bytes)
            try:
                local_losses = []
                for _ in range(round_cfg.local_epochs):
                    local_losses.append(
                        train_epoch(
                            c.model, c.train, c.opt_state, train_cfg, c.epochs_done, c.history.trace
                        )
                    )
                    c.epochs_done += 1
            except Exception as exc:  # noqa: BLE001 - tag and re-raise
                raise ClientTrainingError(c.client_id, exc) from exc
            round_client_loss[c.client_id] = float(np.mean(local_losses))
            ledger.log(round_index, c.client_id, "upload", weight_bytes)
        global_weights = fedavg(
            [(c.model.get_weights(), c.n_samples) for c in clients]
        )

        # Evaluate the aggregated model on every client's validation data.
        # The weights reach the client with the next broadcast, so this
        # costs compute but no extra ledger traffic.
        val_losses, val_sizes = [], []
        for c in clients:
            c.model.set_weights(global_weights)
            val_losses.append(
                evaluate_loss(c.model, c.val, train_cfg.batch_size, c.history.trace)
            )
            val_sizes.append(len(c.val))
        global_val = _weighted_mean(val_losses, val_sizes)
        train_mean = _weighted_mean(
            [round_client_loss[c.client_id] for c in clients],
            [c.n_samples for c in clients],
        )
        history.epochs.append(EpochRecord(train_mean, global_val))
        history.client_losses.append(round_client_loss)
        history.stopped_epoch = round_index + 1

        if global_val < best_val:
            best_val = global_val
            best_weights = {k: v.copy() for k, v in global_weights.items()}
            since_improved = 0
        else:
            since_improved += 1
        if round_cfg.patience_rounds is not None and since_improved >= round_cfg.patience_rounds:
            break

    history.best_val = best_val
    merged = ComputeTrace()
    for c in clients:
        merged.extend(c.history.trace)
    history.trace = merged
    global_model.set_weights(best_weights)
    return global_model, history, ledger


def round_log_lines(history, ledger):
    """One structured-text record per round."""
    per_round_bytes = {}
    for rec in ledger.records:
        per_round_bytes[rec.round_index] = (
            per_round_bytes.get(rec.round_index, 0) + rec.n_bytes
        )
    lines = []
    cumulative = 0
    for i, rec in enumerate(history.epochs):
        cumulative += per_round_bytes.get(i, 0)
        client_part = ""
        if i < len(history.client_losses):
            client_part = " " + " ".join(
                f"loss[{cid}]={loss!r}" for cid, loss in sorted(history.client_losses[i].items())
            )
        lines.append(
            f"round={i + 1}{client_part} global_val={rec.val_loss!r} "
            f"cumulative_mb={cumulative / 1e6!r}"
        )
    return lines
