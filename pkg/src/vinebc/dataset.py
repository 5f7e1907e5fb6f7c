"""Ingest timestamped multivariate ensemble tables and chunk them.

Tables are CSV files with a header row, ISO-8601 timestamps on a 3-hourly
grid, an integer member column and one column per variable.  Chunking
partitions rows into the eight season x diurnal cells; the estimation set of
a chunk can be extended with rows sampled from the temporally adjacent
months and the 3-hour slots bordering the diurnal window.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from datetime import datetime

import numpy as np

from ._util import subseed
from .errors import SchemaError, TableFormatError
from .marginal import normalize_kind

SEASONS = ("DJF", "MAM", "JJA", "SON")
DIURNALS = ("day", "night")

_SEASON_OF_MONTH = {
    12: "DJF", 1: "DJF", 2: "DJF",
    3: "MAM", 4: "MAM", 5: "MAM",
    6: "JJA", 7: "JJA", 8: "JJA",
    9: "SON", 10: "SON", 11: "SON",
}
_SEASON_MONTHS = {
    "DJF": (12, 1, 2),
    "MAM": (3, 4, 5),
    "JJA": (6, 7, 8),
    "SON": (9, 10, 11),
}
# calendar months bordering each season
_ADJACENT_MONTHS = {
    "DJF": (11, 3),
    "MAM": (2, 6),
    "JJA": (5, 9),
    "SON": (8, 12),
}
_DIURNAL_HOURS = {
    "day": (6, 9, 12, 15),
    "night": (18, 21, 0, 3),
}
# 3-hour slots bordering each diurnal window
_BORDER_HOURS = {
    "day": (3, 18),
    "night": (15, 6),
}


@dataclass(frozen=True)
class VariableSpec:
    name: str
    kind: str
    units: str = ""

    def __post_init__(self):
        object.__setattr__(self, "kind", normalize_kind(self.kind))


@dataclass(frozen=True)
class ChunkKey:
    season: str
    diurnal: str

    def __post_init__(self):
        if self.season not in SEASONS or self.diurnal not in DIURNALS:
            raise ValueError(f"invalid chunk key ({self.season}, {self.diurnal})")

    @property
    def label(self) -> str:
        return f"{self.season}-{self.diurnal}"


ALL_CHUNK_KEYS = tuple(ChunkKey(s, w) for s in SEASONS for w in DIURNALS)


@dataclass
class Chunk:
    key: ChunkKey
    core_rows: np.ndarray
    estimation_rows: np.ndarray

    def __post_init__(self):
        self.core_rows = np.asarray(self.core_rows, dtype=int)
        self.estimation_rows = np.asarray(self.estimation_rows, dtype=int)
        if not set(self.core_rows) <= set(self.estimation_rows):
            raise ValueError("core rows must be a subset of the estimation rows")


class ClimateTable:
    """Immutable timestamped multi-member multivariate series."""

    def __init__(self, variables, timestamps, members, values):
        self.variables = [
            v if isinstance(v, VariableSpec) else VariableSpec(**v) for v in variables
        ]
        ts = np.asarray(timestamps, dtype="datetime64[s]")
        mem = np.asarray(members, dtype=int)
        vals = np.asarray(values, dtype=float)
        if vals.ndim != 2 or vals.shape[1] != len(self.variables):
            raise TableFormatError(
                f"values must be n x {len(self.variables)}, got shape {vals.shape}"
            )
        if len(self.variables) < 1:
            raise TableFormatError("need at least one variable")
        if ts.shape[0] != vals.shape[0] or mem.shape[0] != vals.shape[0]:
            raise TableFormatError("timestamps, members and values must align")
        for m in np.unique(mem):
            sel = ts[mem == m]
            if np.any(np.diff(sel.astype("int64")) <= 0):
                raise TableFormatError(f"timestamps of member {m} are not strictly increasing")
        for j, var in enumerate(self.variables):
            if var.kind != "interval" and np.any(vals[:, j] < 0):
                raise TableFormatError(f"variable {var.name!r} ({var.kind}) has negative values")
        self.timestamps = ts
        self.members = mem
        self.values = vals

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return len(self.variables)

    @property
    def kinds(self) -> list:
        return [v.kind for v in self.variables]

    @property
    def var_names(self) -> list:
        return [v.name for v in self.variables]

    def months(self) -> np.ndarray:
        return (self.timestamps.astype("datetime64[M]").astype(int) % 12) + 1

    def hours(self) -> np.ndarray:
        day = self.timestamps.astype("datetime64[D]")
        return (self.timestamps - day).astype("timedelta64[h]").astype(int)


def load_table(path, schema) -> ClimateTable:
    """Parse a CSV against variable descriptors.

    The header must contain ``timestamp``, ``member`` and every schema name;
    extra columns are ignored.  Parse failures cite the 1-based data row.
    """
    specs = [v if isinstance(v, VariableSpec) else VariableSpec(**v) for v in schema]
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TableFormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        col = {name: i for i, name in enumerate(header)}
        for required in ["timestamp", "member"] + [v.name for v in specs]:
            if required not in col:
                raise SchemaError(f"{path}: missing column {required!r}")
        ts_i = col["timestamp"]
        mem_i = col["member"]
        var_i = [col[v.name] for v in specs]
        timestamps, members, rows = [], [], []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                timestamps.append(np.datetime64(datetime.fromisoformat(row[ts_i].strip()), "s"))
            except (ValueError, IndexError):
                raise TableFormatError(
                    f"{path}: cannot parse timestamp {row[ts_i]!r} in row {row_no}"
                ) from None
            try:
                members.append(int(row[mem_i]))
                rows.append([float(row[i]) for i in var_i])
            except (ValueError, IndexError) as exc:
                raise TableFormatError(f"{path}: non-numeric cell in row {row_no}: {exc}") from None
    if not rows:
        raise TableFormatError(f"{path}: no data rows")
    return ClimateTable(specs, timestamps, members, np.asarray(rows))


def chunk_key_of(timestamp) -> ChunkKey:
    """Chunk assignment is a pure function of the wall-clock timestamp."""
    ts = np.datetime64(timestamp, "s")
    month = int(ts.astype("datetime64[M]").astype(int) % 12) + 1
    hour = int((ts - ts.astype("datetime64[D]")).astype("timedelta64[h]").astype(int))
    diurnal = "day" if 6 <= hour < 18 else "night"
    return ChunkKey(_SEASON_OF_MONTH[month], diurnal)


def make_chunks(table: ClimateTable) -> dict:
    """Partition the table into the eight season x diurnal chunks.

    Daytime is the half-open window [06:00, 18:00). Empty chunks are kept.
    """
    if len(table) == 0:
        raise TableFormatError("table is empty")
    months = table.months()
    hours = table.hours()
    season = np.array([_SEASON_OF_MONTH[m] for m in months])
    is_day = (hours >= 6) & (hours < 18)
    chunks = {}
    for key in ALL_CHUNK_KEYS:
        mask = (season == key.season) & (is_day if key.diurnal == "day" else ~is_day)
        idx = np.flatnonzero(mask)
        chunks[key] = Chunk(key=key, core_rows=idx, estimation_rows=idx.copy())
    return chunks


def extend_overlap(chunk: Chunk, table: ClimateTable, fraction: float, seed: int) -> Chunk:
    """Extend the estimation rows with seeded draws from the adjacent pool.

    The pool holds rows from the calendar-adjacent months inside the chunk's
    diurnal window plus rows of the chunk's months in the bordering 3-hour
    slots.  Draws are uniform without replacement, allocated per member in
    proportion to the member's core rows.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    k = int(round(fraction * chunk.core_rows.size))
    if k == 0:
        return Chunk(chunk.key, chunk.core_rows.copy(), chunk.core_rows.copy())
    months = table.months()
    hours = table.hours()
    season_months = _SEASON_MONTHS[chunk.key.season]
    adj_months = _ADJACENT_MONTHS[chunk.key.season]
    window = _DIURNAL_HOURS[chunk.key.diurnal]
    border = _BORDER_HOURS[chunk.key.diurnal]
    pool_mask = (np.isin(months, adj_months) & np.isin(hours, window)) | (
        np.isin(months, season_months) & np.isin(hours, border)
    )
    pool = np.flatnonzero(pool_mask)
    if pool.size <= k:
        if pool.size < k:
            warnings.warn(
                f"adjacent pool ({pool.size}) smaller than requested overlap ({k}); "
                "taking the entire pool"
            )
        extra = pool
    else:
        core_members = table.members[chunk.core_rows]
        member_ids, core_counts = np.unique(core_members, return_counts=True)
        quota = core_counts * (k / chunk.core_rows.size)
        base = np.floor(quota).astype(int)
        remainder = k - base.sum()
        # largest fractional parts get the leftover draws; ties resolve by member id
        order = np.lexsort((member_ids, -(quota - base)))
        base[order[:remainder]] += 1
        parts = []
        for m, want in zip(member_ids, base):
            pool_m = pool[table.members[pool] == m]
            if pool_m.size < want:
                warnings.warn(f"member {m}: pool ({pool_m.size}) smaller than quota ({want})")
                parts.append(pool_m)
                continue
            rng = np.random.default_rng(subseed(seed, int(m)))
            parts.append(rng.choice(pool_m, size=want, replace=False))
        extra = np.concatenate(parts) if parts else np.empty(0, dtype=int)
    estimation = np.sort(np.concatenate([chunk.core_rows, extra]))
    return Chunk(chunk.key, chunk.core_rows.copy(), estimation)


def chunk_manifest(chunks: dict) -> dict:
    """JSON-ready audit record of the chunk partition."""
    return {
        key.label: {
            "season": key.season,
            "diurnal": key.diurnal,
            "n_core": int(chunk.core_rows.size),
            "n_estimation": int(chunk.estimation_rows.size),
            "core_rows": chunk.core_rows.tolist(),
            "estimation_rows": chunk.estimation_rows.tolist(),
        }
        for key, chunk in chunks.items()
    }
