"""Traffic data ingestion, synthetic generation, windowing and normalization.

A station is an N x 11 matrix of two-minute traffic aggregates; the first
five columns (down_link, up_link, rnti_count, rb_up, rb_down) are the
forecast targets. Supervised samples pair an S-row history window with
the next row's target slice. Splits are chronological and min-max
normalization is fitted on the training split only.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    InsufficientDataError,
    OrderingError,
    ParseError,
    SchemaError,
)

FEATURE_NAMES = (
    "down_link",
    "up_link",
    "rnti_count",
    "rb_up",
    "rb_down",
    "rb_up_var",
    "rb_down_var",
    "mcs_up",
    "mcs_down",
    "mcs_up_var",
    "mcs_down_var",
)
TARGET_IDX = (0, 1, 2, 3, 4)
VARIANCE_IDX = (5, 6, 9, 10)
N_FEATURES = len(FEATURE_NAMES)
N_TARGETS = len(TARGET_IDX)
CSV_HEADER = ("timestamp",) + FEATURE_NAMES

SECONDS_PER_DAY = 86400


def _readonly(arr):
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class StationSeries:
    """One base station's multivariate traffic series (rows in time order)."""

    station_id: str
    interval_seconds: int
    matrix: np.ndarray

    def __post_init__(self):
        if self.interval_seconds <= 0:
            raise ConfigError("interval_seconds must be positive")
        m = self.matrix
        if m.ndim != 2 or m.shape[1] != N_FEATURES or m.shape[0] < 1:
            raise SchemaError(f"station matrix must be N x {N_FEATURES}, got {m.shape}")
        object.__setattr__(self, "matrix", _readonly(m))

    @property
    def n_rows(self):
        return self.matrix.shape[0]


@dataclass(frozen=True)
class WindowedSample:
    """An (S x d) history window and the next step's target vector."""

    x: np.ndarray
    y: np.ndarray


@dataclass(frozen=True)
class NormStats:
    """Per-feature min/max fitted on the training split only."""

    minimum: np.ndarray
    maximum: np.ndarray
    fitted_on: str = "train"

    def __post_init__(self):
        lo = _readonly(np.asarray(self.minimum, dtype=np.float64))
        hi = _readonly(np.asarray(self.maximum, dtype=np.float64))
        if lo.shape != hi.shape:
            raise ConfigError("min/max shapes differ")
        if np.any(hi < lo):
            raise ConfigError("max must be >= min elementwise")
        object.__setattr__(self, "minimum", lo)
        object.__setattr__(self, "maximum", hi)

    @property
    def span(self):
        return self.maximum - self.minimum


@dataclass(frozen=True)
class SyntheticSpec:
    """Seeded diurnal-sinusoid generator standing in for real LTE traces."""

    n_days: int
    interval_seconds: int = 120
    base_load: tuple = (20.0, 8.0, 30.0, 12.0, 18.0)
    daily_amplitude: tuple = (10.0, 4.0, 15.0, 6.0, 9.0)
    noise_std: tuple = (2.0, 1.0, 3.0, 1.5, 2.0)
    seed: int = 0
    station_id: str = "synthetic"

    def __post_init__(self):
        if self.n_days < 1:
            raise ConfigError("n_days must be >= 1")
        if self.interval_seconds <= 0:
            raise ConfigError("interval_seconds must be positive")
        for name in ("base_load", "daily_amplitude", "noise_std"):
            vec = np.asarray(getattr(self, name), dtype=np.float64)
            if vec.shape != (N_TARGETS,):
                raise ConfigError(f"{name} must have {N_TARGETS} entries")
            if name != "base_load" and np.any(vec < 0):
                raise ConfigError(f"{name} entries must be >= 0")


def load_csv(path):
    """Parse one station's CSV into a StationSeries.

    The header must match CSV_HEADER exactly; every cell must be numeric;
    timestamps must be strictly increasing; variance features must be
    non-negative.
    """

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise SchemaError(
                f"{path}: header mismatch, expected {','.join(CSV_HEADER)}"
            )
        timestamps = []
        rows = []
        for i, row in enumerate(reader, start=1):
            if len(row) != len(CSV_HEADER):
                raise SchemaError(f"{path}: row {i} has {len(row)} columns")
            try:
                values = [float(cell) for cell in row]
            except ValueError:
                raise ParseError(f"{path}: non-numeric cell in row {i}") from None
            timestamps.append(values[0])
            rows.append(values[1:])
        if not rows:
            raise SchemaError(f"{path}: no data rows")
    ts = np.asarray(timestamps)
    if np.any(np.diff(ts) <= 0):
        bad = int(np.argmax(np.diff(ts) <= 0)) + 2
        raise OrderingError(f"{path}: timestamps not strictly increasing at row {bad}")
    matrix = np.asarray(rows, dtype=np.float64)
    for j in VARIANCE_IDX:
        if np.any(matrix[:, j] < 0):
            bad = int(np.argmax(matrix[:, j] < 0)) + 1
            raise ParseError(
                f"{path}: negative variance feature {FEATURE_NAMES[j]} in row {bad}"
            )
    interval = int(ts[1] - ts[0]) if len(ts) > 1 else 120
    station_id = str(path).rsplit("/", 1)[-1].rsplit(".", 1)[0]
    return StationSeries(station_id=station_id, interval_seconds=interval, matrix=matrix)


def write_csv(path, series, start_timestamp=0):
    """Write a StationSeries in the load_csv schema."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        step = series.interval_seconds
        for i, row in enumerate(series.matrix):
            writer.writerow([start_timestamp + i * step] + [repr(float(v)) for v in row])


def generate_synthetic(spec):
    """Deterministically generate a synthetic station from its spec.

    Target columns follow base + amplitude * sin(2 pi t / day) + Gaussian
    noise, clipped at zero; the remaining columns are fixed functions of
    the targets so the full 11-column schema is populated.
    """

    n = spec.n_days * SECONDS_PER_DAY // spec.interval_seconds
    rng = np.random.default_rng(spec.seed)
    t_seconds = np.arange(n) * spec.interval_seconds
    phase = 2.0 * np.pi * t_seconds / SECONDS_PER_DAY

    base = np.asarray(spec.base_load)
    amp = np.asarray(spec.daily_amplitude)
    noise = np.asarray(spec.noise_std)
    targets = base[None, :] + amp[None, :] * np.sin(phase)[:, None]
    targets = targets + rng.normal(0.0, 1.0, size=(n, N_TARGETS)) * noise[None, :]
    targets = np.clip(targets, 0.0, None)

    down, up, rnti, rb_up, rb_down = (targets[:, j] for j in range(N_TARGETS))
    # Derived columns: bounded normalized variances and MCS-like indices.
    scale_up = max(float(base[1]), 1e-9)
    scale_down = max(float(base[0]), 1e-9)
    mcs_up = 28.0 * up / (up + scale_up)
    mcs_down = 28.0 * down / (down + scale_down)
    matrix = np.column_stack(
        [
            down,
            up,
            rnti,
            rb_up,
            rb_down,
            0.1 * rb_up / (1.0 + rb_up),
            0.1 * rb_down / (1.0 + rb_down),
            mcs_up,
            mcs_down,
            0.1 * mcs_up / (1.0 + mcs_up),
            0.1 * mcs_down / (1.0 + mcs_down),
        ]
    )
    return StationSeries(
        station_id=spec.station_id,
        interval_seconds=spec.interval_seconds,
        matrix=matrix,
    )


def make_windows(series, window, target_idx=TARGET_IDX):
    """Slide an S-row window over the series; yields N - S samples."""
    if window < 1:
        raise ConfigError("window length must be >= 1")
    n = series.n_rows
    if n <= window:
        raise InsufficientDataError(
            f"need more than {window} rows to window, station "
            f"{series.station_id!r} has {n}"
        )
    idx = np.asarray(target_idx, dtype=int)
    m = series.matrix
    samples = []
    for k in range(n - window):
        samples.append(
            WindowedSample(x=m[k : k + window], y=_readonly(m[k + window, idx]))
        )
    return samples


def chronological_split(samples, ratios=(0.6, 0.2, 0.2)):
    """Contiguous train/val/test partition; sizes floor, remainder to test."""
    r = tuple(float(v) for v in ratios)
    if len(r) != 3 or any(v <= 0 for v in r):
        raise ConfigError("ratios must be three positive values")
    if abs(sum(r) - 1.0) > 1e-9:
        raise ConfigError(f"ratios must sum to 1, got {sum(r)}")
    n = len(samples)
    n_train = int(n * r[0])
    n_val = int(n * r[1])
    return (
        samples[:n_train],
        samples[n_train : n_train + n_val],
        samples[n_train + n_val :],
    )


def fit_normalizer(train_samples):
    """Per-feature min/max over the training windows."""
    if not train_samples:
        raise ConfigError("cannot fit a normalizer on an empty training split")
    lo = train_samples[0].x.min(axis=0).copy()
    hi = train_samples[0].x.max(axis=0).copy()
    for s in train_samples[1:]:
        np.minimum(lo, s.x.min(axis=0), out=lo)
        np.maximum(hi, s.x.max(axis=0), out=hi)
    return NormStats(minimum=lo, maximum=hi, fitted_on="train")


def _safe_span(stats):
    span = stats.span
    return np.where(span > 0, span, 1.0), span > 0


def apply_normalizer(stats, samples, target_idx=TARGET_IDX):
    """Min-max scale samples into [0,1]; constant features map to 0."""
    span, live = _safe_span(stats)
    idx = np.asarray(target_idx, dtype=int)
    lo_y, span_y, live_y = stats.minimum[idx], span[idx], live[idx]
    out = []
    for s in samples:
        xn = np.where(live, (s.x - stats.minimum) / span, 0.0)
        yn = np.where(live_y, (s.y - lo_y) / span_y, 0.0)
        out.append(WindowedSample(x=_readonly(xn), y=_readonly(yn)))
    return out


def denormalize_targets(stats, values, target_idx=TARGET_IDX):
    """Map normalized target rows back to the original scale."""
    idx = np.asarray(target_idx, dtype=int)
    return np.asarray(values) * stats.span[idx] + stats.minimum[idx]


def stack_samples(samples):
    """Pack a sample list into (n,S,d) and (n,d') arrays."""
    if not samples:
        raise ConfigError("empty sample list")
    xs = np.stack([s.x for s in samples])
    ys = np.stack([s.y for s in samples])
    return xs, ys


@dataclass(frozen=True)
class SplitDataset:
    """Normalized train/val/test windows for one scope (station or pool)."""

    train: list
    val: list
    test: list
    stats: NormStats
    target_idx: tuple = TARGET_IDX
    raw_rows: int = 0


def build_splits(series_list, window, ratios=(0.6, 0.2, 0.2), target_idx=TARGET_IDX):
    """Window each station, split chronologically per station, pool the
    splits, then normalize with statistics fitted on the pooled train."""

    trains, vals, tests = [], [], []
    raw_rows = 0
    for series in series_list:
        samples = make_windows(series, window, target_idx)
        tr, va, te = chronological_split(samples, ratios)
        trains.extend(tr)
        vals.extend(va)
        tests.extend(te)
        raw_rows += series.n_rows
    stats = fit_normalizer(trains)
    return SplitDataset(
        train=apply_normalizer(stats, trains, target_idx),
        val=apply_normalizer(stats, vals, target_idx),
        test=apply_normalizer(stats, tests, target_idx),
        stats=stats,
        target_idx=tuple(int(i) for i in target_idx),
        raw_rows=raw_rows,
    )
