"""Emission time-series ingestion and preprocessing.

Flow: load emission CSV -> join hourly weather -> resample each session to
a 1 s grid (gaps become all-missing rows) -> impute -> split by session ->
fit/apply the standardization + one-hot pipeline.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import (ConfigurationError, ImputationError, SchemaError,
                     UsageError)

log = logging.getLogger(__name__)

ROLE_NUMERIC = "feature_numeric"
ROLE_CATEGORICAL = "feature_categorical"
ROLE_TARGET = "target"

EMISSION_HEADER = ["timestamp", "engine_rpm", "fuel_lph", "coolant_c",
                   "speed_kmh", "fuel_econ_kmpl",
                   "no_ppm", "no2_ppm", "nox_ppm", "co2_pct", "co_ppm"]
TARGET_COLUMNS = ["no_ppm", "no2_ppm", "nox_ppm", "co2_pct", "co_ppm"]
EMISSION_FEATURES = ["engine_rpm", "fuel_lph", "coolant_c", "speed_kmh",
                     "fuel_econ_kmpl"]
WEATHER_HEADER = ["timestamp_hour", "temp_c", "precip_mm", "conditions"]


# -------------------------------------------------------------------- tables

@dataclass
class SeriesTable:
    """Timestamped multivariate frame with explicit missingness.

    Numeric columns are float64 with NaN as the missing marker; categorical
    columns are object arrays with None. Rows of one session are contiguous
    and strictly increasing in time.
    """
    timestamps: np.ndarray                 # (N,) float64 seconds
    session_ids: np.ndarray                # (N,) int64
    columns: dict[str, np.ndarray] = field(default_factory=dict)
    roles: dict[str, str] = field(default_factory=dict)

    @property
    def n_rows(self) -> int:
        return self.timestamps.shape[0]

    def sessions(self) -> list[int]:
        out, seen = [], set()
        for sid in self.session_ids:
            if sid not in seen:
                seen.add(sid)
                out.append(int(sid))
        return out

    def session_indices(self, sid: int) -> np.ndarray:
        return np.nonzero(self.session_ids == sid)[0]

    def numeric_columns(self) -> list[str]:
        return [c for c, r in self.roles.items() if r in (ROLE_NUMERIC, ROLE_TARGET)]

    def categorical_columns(self) -> list[str]:
        return [c for c, r in self.roles.items() if r == ROLE_CATEGORICAL]

    def select(self, idx: np.ndarray) -> "SeriesTable":
        return SeriesTable(
            timestamps=self.timestamps[idx],
            session_ids=self.session_ids[idx],
            columns={c: v[idx] for c, v in self.columns.items()},
            roles=dict(self.roles),
        )

    def copy(self) -> "SeriesTable":
        return SeriesTable(
            timestamps=self.timestamps.copy(),
            session_ids=self.session_ids.copy(),
            columns={c: v.copy() for c, v in self.columns.items()},
            roles=dict(self.roles),
        )


@dataclass
class WeatherTable:
    """Hourly weather observations."""
    timestamps: np.ndarray     # (H,) float64, hour starts
    temp_c: np.ndarray
    precip_mm: np.ndarray
    conditions: np.ndarray     # object


@dataclass
class SequenceData:
    """Model-ready arrays produced by apply_pipeline."""
    features: np.ndarray       # (N, F) float64, no missing values
    targets: np.ndarray        # (N, P) float64, standardized
    session_ids: np.ndarray
    timestamps: np.ndarray
    feature_names: list[str] = field(default_factory=list)
    target_names: list[str] = field(default_factory=list)

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    def sessions(self) -> list[int]:
        out, seen = [], set()
        for sid in self.session_ids:
            if sid not in seen:
                seen.add(sid)
                out.append(int(sid))
        return out

    def session_slice(self, sid: int) -> np.ndarray:
        return np.nonzero(self.session_ids == sid)[0]


# ------------------------------------------------------------------- loading

def _parse_cell(raw: str, row: int, col: str) -> float:
    raw = raw.strip()
    if raw == "":
        return np.nan
    try:
        return float(raw)
    except ValueError:
        raise SchemaError(f"unparseable value {raw!r} at row {row}, column {col!r}")


def load_emission_csv(path, session_gap: float = 60.0) -> SeriesTable:
    """Read the 11-column emission CSV. Gaps > session_gap seconds between
    consecutive rows start a new session. Missing rows stay missing (no grid
    materialization here; see resample_to_grid)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file")
        if header != EMISSION_HEADER:
            missing = [c for c in EMISSION_HEADER if c not in header]
            extra = [c for c in header if c not in EMISSION_HEADER]
            raise SchemaError(
                f"{path}: header mismatch; missing columns {missing}, "
                f"unknown columns {extra}")
        rows = []
        for i, rec in enumerate(reader, start=1):
            if not rec:
                continue
            if len(rec) != len(EMISSION_HEADER):
                raise SchemaError(f"{path}: row {i} has {len(rec)} cells, "
                                  f"expected {len(EMISSION_HEADER)}")
            rows.append([_parse_cell(c, i, EMISSION_HEADER[j])
                         for j, c in enumerate(rec)])
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    data = np.asarray(rows, dtype=np.float64)
    if np.any(np.isnan(data[:, 0])):
        raise SchemaError(f"{path}: missing timestamp value")
    order = np.argsort(data[:, 0], kind="stable")
    data = data[order]
    ts = data[:, 0]
    gaps = np.diff(ts)
    session_ids = np.concatenate([[0], np.cumsum(gaps > session_gap)]).astype(np.int64)
    dup = np.nonzero((gaps == 0) & (np.diff(session_ids) == 0))[0]
    if dup.size:
        i = int(dup[0])
        raise SchemaError(
            f"{path}: duplicate timestamp {ts[i]} at sorted rows {i} and {i + 1}")
    columns = {name: data[:, j + 1] for j, name in enumerate(EMISSION_HEADER[1:])}
    roles = {c: ROLE_NUMERIC for c in EMISSION_FEATURES}
    roles.update({c: ROLE_TARGET for c in TARGET_COLUMNS})
    return SeriesTable(timestamps=ts, session_ids=session_ids,
                       columns=columns, roles=roles)


def load_weather_csv(path) -> WeatherTable:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        if header != WEATHER_HEADER:
            raise SchemaError(f"{path}: weather header mismatch, got {header}")
        ts, temp, precip, cond = [], [], [], []
        for i, rec in enumerate(reader, start=1):
            if not rec:
                continue
            ts.append(_parse_cell(rec[0], i, "timestamp_hour"))
            temp.append(_parse_cell(rec[1], i, "temp_c"))
            precip.append(_parse_cell(rec[2], i, "precip_mm"))
            cond.append(rec[3].strip() or None)
    order = np.argsort(np.asarray(ts), kind="stable")
    return WeatherTable(
        timestamps=np.asarray(ts)[order],
        temp_c=np.asarray(temp)[order],
        precip_mm=np.asarray(precip)[order],
        conditions=np.asarray(cond, dtype=object)[order],
    )


def join_weather(table: SeriesTable, weather: WeatherTable) -> SeriesTable:
    """Attach the most recent at-or-before hourly weather row to every sample."""
    out = table.copy()
    idx = np.searchsorted(weather.timestamps, table.timestamps, side="right") - 1
    if np.any(idx < 0):
        first_bad = int(np.argmax(idx < 0))
        raise SchemaError(
            f"emission timestamp {table.timestamps[first_bad]} precedes the "
            f"first weather hour {weather.timestamps[0]}")
    out.columns["temp_c"] = weather.temp_c[idx].astype(np.float64)
    out.columns["precip_mm"] = weather.precip_mm[idx].astype(np.float64)
    out.columns["conditions"] = weather.conditions[idx].copy()
    out.roles["temp_c"] = ROLE_NUMERIC
    out.roles["precip_mm"] = ROLE_NUMERIC
    out.roles["conditions"] = ROLE_CATEGORICAL
    return out


# ---------------------------------------------------------------- resampling

def resample_to_grid(table: SeriesTable, step: float = 1.0) -> SeriesTable:
    """Expand every session to a regular grid between its first and last
    timestamp. Grid points without a source row become all-missing rows."""
    ts_parts, sid_parts = [], []
    col_parts: dict[str, list[np.ndarray]] = {c: [] for c in table.columns}
    for sid in table.sessions():
        idx = table.session_indices(sid)
        ts = table.timestamps[idx]
        t0 = ts[0]
        n_grid = int(round((ts[-1] - t0) / step)) + 1
        grid = t0 + np.arange(n_grid) * step
        pos = np.rint((ts - t0) / step).astype(np.int64)
        ts_parts.append(grid)
        sid_parts.append(np.full(n_grid, sid, dtype=np.int64))
        for name, vals in table.columns.items():
            if table.roles.get(name) == ROLE_CATEGORICAL:
                new = np.full(n_grid, None, dtype=object)
            else:
                new = np.full(n_grid, np.nan)
            new[pos] = vals[idx]
            col_parts[name].append(new)
    return SeriesTable(
        timestamps=np.concatenate(ts_parts),
        session_ids=np.concatenate(sid_parts),
        columns={c: np.concatenate(parts) for c, parts in col_parts.items()},
        roles=dict(table.roles),
    )


# ---------------------------------------------------------------- imputation

def _bfill(x: np.ndarray) -> np.ndarray:
    """Fill each NaN with the next observed value (trailing NaNs remain)."""
    x = x.copy()
    nxt = np.nan
    for i in range(x.size - 1, -1, -1):
        if np.isnan(x[i]):
            x[i] = nxt
        else:
            nxt = x[i]
    return x


def _ffill(x: np.ndarray) -> np.ndarray:
    x = x.copy()
    prev = np.nan
    for i in range(x.size):
        if np.isnan(x[i]):
            x[i] = prev
        else:
            prev = x[i]
    return x


def _fill_categorical(vals: np.ndarray) -> np.ndarray:
    vals = vals.copy()
    prev = None
    for i in range(vals.size):
        if vals[i] is None:
            vals[i] = prev
        else:
            prev = vals[i]
    nxt = None
    for i in range(vals.size - 1, -1, -1):
        if vals[i] is None:
            vals[i] = nxt
        else:
            nxt = vals[i]
    return vals


def impute_rolling_median(table: SeriesTable, w: int = 5) -> SeriesTable:
    """Four-step recipe per numeric column, per session:
    centered width-w median over observed values, substitute at missing
    cells, then backward fill and forward fill for the boundary runs.
    Categorical columns are forward/backward filled."""
    if w < 3 or w % 2 == 0:
        raise ConfigurationError(f"rolling window must be odd and >= 3, got {w}")
    hw = w // 2
    out = table.copy()
    for sid in table.sessions():
        idx = table.session_indices(sid)
        for name in table.numeric_columns():
            x = out.columns[name][idx]
            obs = ~np.isnan(x)
            if not obs.any():
                raise ImputationError(
                    f"column {name!r} entirely missing in session {sid}")
            missing = np.nonzero(~obs)[0]
            filled = x.copy()
            for i in missing:
                lo = max(0, i - hw)
                window = x[lo:i + hw + 1]
                vals = window[~np.isnan(window)]
                if vals.size:
                    filled[i] = np.median(vals)
            filled = _bfill(filled)
            filled = _ffill(filled)
            out.columns[name][idx] = filled
        for name in table.categorical_columns():
            out.columns[name][idx] = _fill_categorical(out.columns[name][idx])
    return out


def impute_knn(table: SeriesTable, k: int = 20,
               weighting: str = "uniform") -> SeriesTable:
    """Comparison baseline: each missing cell is filled with the uniform mean
    of the column over the k nearest rows. Distance is Euclidean over numeric
    columns observed in both rows (excluding the column being filled), scaled
    by n_cols/n_observed so partial distances compare fairly."""
    if k < 1:
        raise ConfigurationError(f"k must be >= 1, got {k}")
    if weighting != "uniform":
        raise ConfigurationError(f"unsupported weighting {weighting!r}")
    out = table.copy()
    names = table.numeric_columns()
    X = np.column_stack([out.columns[c] for c in names])
    filled = X.copy()
    n_rows, n_cols = X.shape
    for ci, name in enumerate(names):
        col = X[:, ci]
        miss = np.nonzero(np.isnan(col))[0]
        if miss.size == 0:
            continue
        cand = np.nonzero(~np.isnan(col))[0]
        if cand.size == 0:
            raise ImputationError(f"no observed values in column {name!r}")
        feat_cols = [j for j in range(n_cols) if j != ci]
        F = X[:, feat_cols]
        M = (~np.isnan(F)).astype(np.float64)
        A = np.nan_to_num(F)
        sq = A * A
        kk = min(k, cand.size)
        cand_vals = col[cand]
        A_c, M_c, sq_c = A[cand], M[cand], sq[cand]
        for lo in range(0, miss.size, 512):
            rows = miss[lo:lo + 512]
            d2 = (sq[rows] @ M_c.T + M[rows] @ sq_c.T
                  - 2.0 * (A[rows] @ A_c.T))
            counts = M[rows] @ M_c.T
            with np.errstate(divide="ignore", invalid="ignore"):
                d2 = np.where(counts > 0, d2 * (len(feat_cols) / counts), np.inf)
            nearest = np.argpartition(d2, kk - 1, axis=1)[:, :kk]
            est = cand_vals[nearest].mean(axis=1)
            # no mutually observed features at all -> column-mean fallback
            no_overlap = ~np.isfinite(
                np.take_along_axis(d2, nearest, axis=1)).any(axis=1)
            est[no_overlap] = cand_vals.mean()
            filled[rows, ci] = est
    for ci, name in enumerate(names):
        out.columns[name] = filled[:, ci]
    for name in table.categorical_columns():
        for sid in table.sessions():
            idx = table.session_indices(sid)
            out.columns[name][idx] = _fill_categorical(out.columns[name][idx])
    return out


# ------------------------------------------------------------------ pipeline

@dataclass
class FittedPipeline:
    """Frozen preprocessing state: standardization statistics, one-hot
    vocabularies, imputer window, and the feature ordering."""
    numeric_columns: list[str]
    numeric_mean: dict[str, float]
    numeric_scale: dict[str, float]
    categorical_columns: list[str]
    vocabularies: dict[str, list[str]]
    target_columns: list[str]
    target_mean: dict[str, float]
    target_scale: dict[str, float]
    window: int
    feature_names: list[str]

    def to_dict(self) -> dict:
        return {
            "numeric_columns": self.numeric_columns,
            "numeric_mean": self.numeric_mean,
            "numeric_scale": self.numeric_scale,
            "categorical_columns": self.categorical_columns,
            "vocabularies": self.vocabularies,
            "target_columns": self.target_columns,
            "target_mean": self.target_mean,
            "target_scale": self.target_scale,
            "window": self.window,
            "feature_names": self.feature_names,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FittedPipeline":
        return cls(**d)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)


def fit_pipeline(train_table: SeriesTable, vocab_table: SeriesTable | None = None,
                 window: int = 5) -> FittedPipeline:
    """Fit standardization on the training sessions. One-hot vocabularies are
    fit on vocab_table when given (pass the union of train and validation to
    keep feature dimensions aligned across the two; omit for a strict
    train-only fit)."""
    numeric = [c for c, r in train_table.roles.items() if r == ROLE_NUMERIC]
    cats = train_table.categorical_columns()
    mean, scale = {}, {}
    for name in numeric + TARGET_COLUMNS:
        vals = train_table.columns[name]
        if np.any(np.isnan(vals)):
            raise UsageError(f"column {name!r} still has missing values; "
                             "impute before fitting the pipeline")
        mu = float(np.mean(vals))
        sd = float(np.std(vals))
        if sd < 1e-12:
            raise ConfigurationError(
                f"column {name!r} is constant in the training set; "
                "cannot standardize")
        mean[name], scale[name] = mu, sd
    vocab_src = vocab_table if vocab_table is not None else train_table
    vocabularies = {}
    for name in cats:
        vals = vocab_src.columns[name]
        vocabularies[name] = sorted({v for v in vals if v is not None})
    feature_names = list(numeric)
    for name in cats:
        feature_names += [f"{name}={v}" for v in vocabularies[name]]
    return FittedPipeline(
        numeric_columns=numeric,
        numeric_mean={c: mean[c] for c in numeric},
        numeric_scale={c: scale[c] for c in numeric},
        categorical_columns=cats,
        vocabularies=vocabularies,
        target_columns=list(TARGET_COLUMNS),
        target_mean={c: mean[c] for c in TARGET_COLUMNS},
        target_scale={c: scale[c] for c in TARGET_COLUMNS},
        window=window,
        feature_names=feature_names,
    )


def apply_pipeline(pipe: FittedPipeline, table: SeriesTable) -> SequenceData:
    """Standardize numerics with the frozen train statistics and one-hot the
    categoricals with the frozen vocabularies. Unknown categories encode as
    all-zeros with a logged warning."""
    n = table.n_rows
    blocks = []
    for name in pipe.numeric_columns:
        vals = table.columns[name]
        if np.any(np.isnan(vals)):
            raise UsageError(f"column {name!r} has missing values at apply time")
        blocks.append((vals - pipe.numeric_mean[name]) / pipe.numeric_scale[name])
    for name in pipe.categorical_columns:
        vocab = pipe.vocabularies[name]
        index = {v: i for i, v in enumerate(vocab)}
        onehot = np.zeros((n, len(vocab)))
        unknown = set()
        for i, v in enumerate(table.columns[name]):
            j = index.get(v)
            if j is not None:
                onehot[i, j] = 1.0
            elif v is not None:
                unknown.add(v)
        if unknown:
            log.warning("column %r: categories %s not in vocabulary; "
                        "encoded as all-zeros", name, sorted(unknown))
        blocks.append(onehot)
    features = np.column_stack(blocks)
    targets = np.column_stack([
        (table.columns[c] - pipe.target_mean[c]) / pipe.target_scale[c]
        for c in pipe.target_columns])
    if np.any(np.isnan(targets)):
        raise UsageError("target columns have missing values at apply time")
    return SequenceData(
        features=features,
        targets=targets,
        session_ids=table.session_ids.copy(),
        timestamps=table.timestamps.copy(),
        feature_names=list(pipe.feature_names),
        target_names=list(pipe.target_columns),
    )


def split_sessions(table: SeriesTable,
                   train_fraction: float = 0.8) -> tuple[SeriesTable, SeriesTable]:
    """Whole-session split: earliest sessions go to train until the
    cumulative row count first reaches train_fraction of the total; the
    remainder is validation (never empty)."""
    sids = table.sessions()
    if len(sids) < 2:
        raise ConfigurationError(
            f"need at least 2 sessions to split, got {len(sids)}")
    total = table.n_rows
    counts = {sid: table.session_indices(sid).size for sid in sids}
    train_sids, cum = [], 0
    for i, sid in enumerate(sids):
        if i == len(sids) - 1:
            break  # keep at least one validation session
        train_sids.append(sid)
        cum += counts[sid]
        if cum >= train_fraction * total:
            break
    train_mask = np.isin(table.session_ids, train_sids)
    return table.select(np.nonzero(train_mask)[0]), \
        table.select(np.nonzero(~train_mask)[0])
