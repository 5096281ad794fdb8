"""Load-series ingestion, min-max scaling, windowing and chronological splits."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DataError, InputError
from .tensor import Rng

log = logging.getLogger(__name__)

MAX_INTERPOLATED_GAP = 3
DEFAULT_SPLITS = (0.70, 0.15, 0.15)


@dataclass
class IngestReport:
    rows_read: int = 0
    rows_consumed: int = 0
    rows_discarded: int = 0  # outside the kept contiguous segment
    missing_load_rows: int = 0  # rows present in the file with an empty load cell
    interpolated: int = 0  # grid points filled by interpolation
    segments: int = 1

    def reconciles(self) -> bool:
        return self.rows_read == self.rows_consumed + self.rows_discarded + self.missing_load_rows


@dataclass
class LoadSeries:
    timestamps: np.ndarray  # int64 epoch seconds, strictly increasing
    load: np.ndarray
    features: Dict[str, np.ndarray] = field(default_factory=dict)
    report: Optional[IngestReport] = None

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        self.load = np.asarray(self.load, dtype=np.float64)
        self.features = {k: np.asarray(v, dtype=np.float64) for k, v in self.features.items()}
        n = len(self.timestamps)
        if len(self.load) != n or any(len(v) != n for v in self.features.values()):
            raise DataError("all series columns must have equal length")
        if n > 1 and not (np.diff(self.timestamps) > 0).all():
            raise DataError("timestamps must be strictly increasing")
        if not np.isfinite(self.load).all():
            raise DataError("load contains missing or non-finite values")

    def __len__(self):
        return len(self.load)

    @property
    def feature_names(self) -> List[str]:
        return ["load", *self.features]

    def matrix(self) -> np.ndarray:
        """(time, features) with load in column 0."""
        return np.column_stack([self.load, *self.features.values()]) if self.features else self.load[:, None].copy()


# --------------------------------------------------------------------------
# CSV ingestion


def parse_schema(text: str) -> dict:
    """``"ts=<col>,load=<col>[,feat=<col>...]"`` -> schema dict."""
    schema = {"ts": None, "load": None, "features": []}
    for part in filter(None, (p.strip() for p in text.split(","))):
        if "=" not in part:
            raise ConfigurationError(f"schema entry {part!r} is not key=column")
        key, col = (s.strip() for s in part.split("=", 1))
        if key in ("ts", "load"):
            schema[key] = col
        elif key in ("feat", "feature"):
            schema["features"].append(col)
        else:
            raise ConfigurationError(f"unknown schema key {key!r}; use ts, load or feat")
    if not schema["ts"] or not schema["load"]:
        raise ConfigurationError("schema must name both ts=<column> and load=<column>")
    return schema


def parse_timestamp(text: str) -> int:
    """Epoch seconds from either a number or an ISO-8601 string (naive = UTC)."""
    s = text.strip()
    try:
        return int(round(float(s)))
    except ValueError:
        pass
    if s.endswith("Z"):
        s = s[:-1] + "+00:00"
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(round(dt.timestamp()))


def _parse_value(text, column, line):
    s = (text or "").strip()
    if s == "" or s.lower() in ("nan", "na", "null"):
        return math.nan
    try:
        v = float(s)
    except ValueError:
        raise DataError(f"line {line}: cannot parse {column}={text!r} as a number") from None
    if not math.isfinite(v):
        return math.nan
    return v


def ingest_csv(path, schema) -> LoadSeries:
    """Read, sort and gap-fill a load CSV.

    Gaps of up to three missing intervals (absent rows or empty load cells)
    are filled by linear interpolation; longer gaps split the series and the
    longest contiguous segment is kept.
    """
    if isinstance(schema, str):
        schema = parse_schema(schema)
    ts_col, load_col = schema["ts"], schema["load"]
    feat_cols = list(schema.get("features") or [])
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from None
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty file (a header row is required)")
        missing = [c for c in [ts_col, load_col, *feat_cols] if c not in reader.fieldnames]
        if missing:
            raise DataError(f"{path}: missing column(s) {missing}; header has {reader.fieldnames}")
        ts, load, feats = [], [], {c: [] for c in feat_cols}
        for row in reader:
            line = reader.line_num
            raw_ts = row.get(ts_col)
            if raw_ts is None or raw_ts.strip() == "":
                raise DataError(f"{path}: line {line}: empty timestamp")
            try:
                ts.append(parse_timestamp(raw_ts))
            except ValueError:
                raise DataError(f"{path}: line {line}: unparseable timestamp {raw_ts!r}") from None
            try:
                load.append(_parse_value(row.get(load_col), load_col, line))
                for c in feat_cols:
                    feats[c].append(_parse_value(row.get(c), c, line))
            except DataError as exc:
                raise DataError(f"{path}: {exc}") from None
    return assemble_series(ts, load, feats, source=str(path))


def assemble_series(ts, load, feats=None, source="<memory>") -> LoadSeries:
    feats = feats or {}
    report = IngestReport(rows_read=len(ts))
    if not ts:
        raise DataError(f"{source}: no data rows")
    ts = np.asarray(ts, dtype=np.int64)
    load = np.asarray(load, dtype=np.float64)
    fmat = np.column_stack([np.asarray(v, dtype=np.float64) for v in feats.values()]) if feats else np.zeros((len(ts), 0))
    order = np.argsort(ts, kind="stable")
    ts, load, fmat = ts[order], load[order], fmat[order]
    dup = ts[1:][np.diff(ts) == 0]
    if dup.size:
        raise DataError(f"{source}: duplicate timestamps {sorted(set(dup.tolist()))[:5]}")
    present = np.isfinite(load)
    report.missing_load_rows = int((~present).sum())
    if not present.any():
        raise DataError(f"{source}: every load value is missing")
    if len(ts) == 1:
        report.rows_consumed = 1
        return LoadSeries(ts, load, {}, report)
    step = int(np.median(np.diff(ts)))
    grid_pos = np.rint((ts - ts[0]) / step).astype(np.int64)
    if (np.diff(grid_pos) == 0).any():
        raise DataError(f"{source}: timestamps are too irregular for a {step}s interval grid")
    n_grid = int(grid_pos[-1]) + 1
    grid = np.full((n_grid, 1 + fmat.shape[1]), np.nan)
    grid[grid_pos, 0] = load
    grid[grid_pos, 1:] = fmat
    row_at = np.full(n_grid, -1)
    row_at[grid_pos] = np.arange(len(ts))
    valid = np.isfinite(grid).all(axis=1)

    # split into segments at gaps longer than the interpolation limit
    segments = []
    start = None
    run = 0
    last_valid = None
    for k in range(n_grid):
        if valid[k]:
            if start is None:
                start = k
            elif run > MAX_INTERPOLATED_GAP:
                segments.append((start, last_valid))
                start = k
            run = 0
            last_valid = k
        else:
            run += 1
    segments.append((start, last_valid))
    report.segments = len(segments)
    lo, hi = max(segments, key=lambda s: (s[1] - s[0], -s[0]))
    if len(segments) > 1:
        log.warning("%s: %d segments after gap splitting; keeping rows %d..%d of the regular grid",
                    source, len(segments), lo, hi)
    seg = grid[lo : hi + 1].copy()
    seg_valid = valid[lo : hi + 1]
    idx = np.arange(len(seg))
    if not seg_valid.all():
        for j in range(seg.shape[1]):
            seg[~seg_valid, j] = np.interp(idx[~seg_valid], idx[seg_valid], seg[seg_valid, j])
    report.interpolated = int((~seg_valid).sum())
    kept_rows = row_at[lo : hi + 1]
    consumed = (kept_rows >= 0) & seg_valid
    report.rows_consumed = int(consumed.sum())
    report.rows_discarded = report.rows_read - report.rows_consumed - report.missing_load_rows
    # rows whose load was present but whose features were missing count as discarded
    if report.interpolated:
        log.info("%s: interpolated %d missing interval(s)", source, report.interpolated)
    out_ts = ts[0] + (np.arange(lo, hi + 1) * step)
    names = list(feats)
    return LoadSeries(out_ts, seg[:, 0], {n: seg[:, 1 + j] for j, n in enumerate(names)}, report)


# --------------------------------------------------------------------------
# Normalization


@dataclass
class NormStats:
    names: List[str]
    mins: np.ndarray
    maxs: np.ndarray
    version: int = 1

    def __post_init__(self):
        self.mins = np.asarray(self.mins, dtype=np.float64)
        self.maxs = np.asarray(self.maxs, dtype=np.float64)

    @property
    def load_min(self) -> float:
        return float(self.mins[0])

    @property
    def load_range(self) -> float:
        return float(self.maxs[0] - self.mins[0])

    def apply(self, matrix: np.ndarray) -> np.ndarray:
        return (np.asarray(matrix, dtype=np.float64) - self.mins) / (self.maxs - self.mins)

    def invert(self, matrix: np.ndarray) -> np.ndarray:
        return np.asarray(matrix, dtype=np.float64) * (self.maxs - self.mins) + self.mins

    def denormalize_load(self, y) -> np.ndarray:
        return np.asarray(y, dtype=np.float64) * self.load_range + self.load_min

    def normalize_load(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=np.float64) - self.load_min) / self.load_range

    def to_dict(self) -> dict:
        return {"version": self.version, "names": list(self.names),
                "mins": [float(v) for v in self.mins], "maxs": [float(v) for v in self.maxs]}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(list(d["names"]), d["mins"], d["maxs"], int(d.get("version", 1)))


def fit_normalization(matrix: np.ndarray, names: Sequence[str]) -> NormStats:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape[0] == 0:
        raise ConfigurationError("cannot fit normalization on an empty training split")
    mins, maxs = matrix.min(axis=0), matrix.max(axis=0)
    for name, lo, hi in zip(names, mins, maxs):
        if not hi > lo:
            raise ConfigurationError(f"feature {name!r} is constant on the training rows (min == max == {lo})")
    return NormStats(list(names), mins, maxs)


def normalize(series: LoadSeries, train_rows):
    """Min-max scale every column with statistics from ``train_rows`` only.

    ``train_rows`` is an int (leading row count) or an index array. Values
    outside the training range map outside [0, 1]; nothing is clamped.
    Returns ``(normalized (time, features) matrix, NormStats)``.
    """
    matrix = series.matrix()
    rows = np.arange(int(train_rows)) if np.isscalar(train_rows) else np.asarray(train_rows)
    stats = fit_normalization(matrix[rows], series.feature_names)
    return stats.apply(matrix), stats


def denormalize(matrix, stats: NormStats) -> np.ndarray:
    return stats.invert(matrix)


# --------------------------------------------------------------------------
# Windowing


@dataclass
class WindowedDataset:
    X: np.ndarray  # (n, lookback, features), normalized
    y: np.ndarray  # (n,), normalized load at the step after each window
    stats: NormStats
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    dropped: int
    lookback: int
    last_input: np.ndarray = None  # (n,) normalized load at each window's final step
    target_rows: np.ndarray = None  # (n,) row index of every target in the series

    def split(self, name: str):
        idx = {"train": self.train_idx, "val": self.val_idx, "test": self.test_idx}[name]
        return self.X[idx], self.y[idx]

    @property
    def train(self):
        return self.split("train")

    @property
    def val(self):
        return self.split("val")

    @property
    def test(self):
        return self.split("test")

    def denormalized_targets(self, name: str) -> np.ndarray:
        return self.stats.denormalize_load(self.split(name)[1])

    def persistence(self, name: str) -> np.ndarray:
        """Naive forecast y_hat[t] = y[t-1], denormalized."""
        idx = {"train": self.train_idx, "val": self.val_idx, "test": self.test_idx}[name]
        return self.stats.denormalize_load(self.last_input[idx])


def split_boundaries(n_rows: int, splits=DEFAULT_SPLITS):
    if len(splits) != 3 or any(s < 0 for s in splits) or not math.isclose(sum(splits), 1.0):
        raise ConfigurationError(f"split fractions must be three nonnegative numbers summing to 1, got {splits}")
    a = int(math.floor(splits[0] * n_rows))
    b = int(math.floor((splits[0] + splits[1]) * n_rows))
    return a, b


def window(series: LoadSeries, lookback: int, horizon: int = 1, splits=DEFAULT_SPLITS,
           stats: Optional[NormStats] = None) -> WindowedDataset:
    """Sliding windows with a chronological train/val/test split.

    Rows are split 70/15/15 by time; window ``i`` uses rows ``[i, i+lookback)``
    as input and row ``i+lookback`` as target, and belongs to a split only if
    all of those rows do. Windows crossing a boundary are dropped.

    Normalization statistics come from the training rows unless ``stats``
    (e.g. restored from a checkpoint) is given.
    """
    if horizon != 1:
        raise ConfigurationError(f"only single-step forecasting is supported (horizon=1), got {horizon}")
    if lookback < 1:
        raise ConfigurationError("lookback must be >= 1")
    N = len(series)
    if N <= lookback:
        raise InputError(f"series of length {N} is too short for lookback {lookback}")
    a, b = split_boundaries(N, splits)
    if stats is None:
        norm, stats = normalize(series, a)
    else:
        if list(stats.names) != series.feature_names:
            raise ConfigurationError(f"normalization stats cover {stats.names}, series has {series.feature_names}")
        norm = stats.apply(series.matrix())
    n = N - lookback
    X = np.lib.stride_tricks.sliding_window_view(norm, lookback, axis=0)[:n].transpose(0, 2, 1)
    X = np.ascontiguousarray(X)
    y = norm[lookback:, 0].copy()
    first = np.arange(n)
    last = first + lookback  # target row
    train = np.flatnonzero(last < a)
    val = np.flatnonzero((first >= a) & (last < b))
    test = np.flatnonzero(first >= b)
    dropped = n - len(train) - len(val) - len(test)
    return WindowedDataset(X, y, stats, train, val, test, dropped, lookback,
                           last_input=norm[lookback - 1 : N - 1, 0].copy(), target_rows=last)


def windows_from_matrix(matrix: np.ndarray, lookback: int) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=np.float64)
    n = matrix.shape[0] - lookback + 1
    if n < 1:
        raise InputError(f"need at least {lookback} rows, got {matrix.shape[0]}")
    return np.ascontiguousarray(np.lib.stride_tricks.sliding_window_view(matrix, lookback, axis=0).transpose(0, 2, 1))


# --------------------------------------------------------------------------
# Synthetic data


@dataclass(frozen=True)
class SyntheticParams:
    """Generator constants (kW·h per hourly interval)."""

    base: float = 1000.0
    daily_amplitude: float = 250.0
    daily_harmonic: float = 60.0
    weekly_amplitude: float = 100.0
    trend_per_hour: float = 0.02
    noise_sd: float = 15.0
    start: int = 1577836800  # 2020-01-01T00:00:00Z


def synthetic_load(days: int, seed: int, params: SyntheticParams = SyntheticParams()) -> LoadSeries:
    """Hourly load: base + trend + daily (two harmonics) + weekly + Gaussian noise.

    With ``noise_sd=0`` the series satisfies ``v[t+168] - v[t] == 168*trend``.
    """
    if days < 2:
        raise ConfigurationError("synthetic_load needs days >= 2")
    t = np.arange(24 * int(days), dtype=np.float64)
    day = 2 * np.pi * t / 24.0
    week = 2 * np.pi * t / 168.0
    v = (
        params.base
        + params.trend_per_hour * t
        + params.daily_amplitude * np.sin(day - np.pi / 2)
        + params.daily_harmonic * np.sin(2 * day)
        + params.weekly_amplitude * np.sin(week)
    )
    if params.noise_sd:
        v = v + Rng(seed).normal(0.0, params.noise_sd, size=t.shape)
    ts = params.start + 3600 * np.arange(len(t), dtype=np.int64)
    return LoadSeries(ts, v, {}, IngestReport(rows_read=len(t), rows_consumed=len(t)))


def write_csv(series: LoadSeries, path, ts_format: str = "iso") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "load", *series.features])
        for k in range(len(series)):
            if ts_format == "iso":
                stamp = datetime.fromtimestamp(int(series.timestamps[k]), tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
            else:
                stamp = str(int(series.timestamps[k]))
            w.writerow([stamp, repr(float(series.load[k])), *(repr(float(v[k])) for v in series.features.values())])
