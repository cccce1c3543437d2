"""Right-censored tabular survival data: loading, validation, filtering and
time discretization."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "DatasetError",
    "Schema",
    "SurvivalDataset",
    "TimeGrid",
    "load_schema",
    "load_csv",
    "write_csv",
    "variance_filter",
    "discretize",
]

TAGS = ("conventional", "dbm")


class DatasetError(ValueError):
    """Invalid survival data. ``row`` is 1-based over data rows (header
    excluded); ``column`` is the CSV header name."""

    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)
        self.row = row
        self.column = column


@dataclass(frozen=True)
class Schema:
    """Column roles of a survival CSV."""

    time: str
    event: str
    conventional: tuple[str, ...] = ()
    dbm: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "conventional", tuple(self.conventional))
        object.__setattr__(self, "dbm", tuple(self.dbm))

    @property
    def feature_columns(self) -> tuple[str, ...]:
        return self.conventional + self.dbm

    @classmethod
    def from_dict(cls, d: Mapping) -> "Schema":
        try:
            return cls(
                time=d["time"],
                event=d["event"],
                conventional=tuple(d.get("conventional", ())),
                dbm=tuple(d.get("dbm", ())),
            )
        except KeyError as e:
            raise DatasetError(f"schema is missing key {e.args[0]!r}") from None

    def to_dict(self) -> dict:
        return {
            "time": self.time,
            "event": self.event,
            "conventional": list(self.conventional),
            "dbm": list(self.dbm),
        }


def load_schema(path) -> Schema:
    with open(path) as fh:
        return Schema.from_dict(json.load(fh))


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SurvivalDataset:
    """Feature matrix plus per-row (time, event) outcome.

    ``tags`` optionally maps every feature name to ``"conventional"`` or
    ``"dbm"``. Arrays are copied and made read-only on construction.
    """

    features: np.ndarray
    feature_names: tuple[str, ...]
    times: np.ndarray
    events: np.ndarray
    tags: Mapping[str, str] | None = None

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim != 2:
            raise DatasetError("features must be a 2-D matrix")
        names = tuple(str(n) for n in self.feature_names)
        if len(names) != X.shape[1]:
            raise DatasetError(
                f"{X.shape[1]} feature columns but {len(names)} feature names"
            )
        seen = set()
        for name in names:
            if name in seen:
                raise DatasetError("duplicate feature name", column=name)
            seen.add(name)
        t = np.asarray(self.times, dtype=float)
        e = np.asarray(self.events)
        if t.shape != (X.shape[0],) or e.shape != (X.shape[0],):
            raise DatasetError("times/events length does not match feature rows")
        if not np.all(np.isfinite(X)):
            r, c = np.argwhere(~np.isfinite(X))[0]
            raise DatasetError("missing or non-finite value", row=r + 1, column=names[c])
        bad = np.flatnonzero(~(np.isfinite(t) & (t > 0)))
        if bad.size:
            raise DatasetError("time must be > 0", row=bad[0] + 1)
        bad = np.flatnonzero((e != 0) & (e != 1))
        if bad.size:
            raise DatasetError("event must be 0 or 1", row=bad[0] + 1)
        tags = None
        if self.tags is not None:
            tags = {}
            for name in names:
                tag = self.tags.get(name)
                if tag not in TAGS:
                    raise DatasetError(f"feature tag must be one of {TAGS}", column=name)
                tags[name] = tag
        object.__setattr__(self, "features", _frozen(X, float))
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "times", _frozen(t, float))
        object.__setattr__(self, "events", _frozen(e, np.int64))
        object.__setattr__(self, "tags", tags)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_events(self) -> int:
        return int(self.events.sum())

    def index_of(self, name: str) -> int:
        try:
            return self.feature_names.index(name)
        except ValueError:
            raise KeyError(f"unknown feature {name!r}") from None

    def column(self, name: str) -> np.ndarray:
        return self.features[:, self.index_of(name)]

    def names_tagged(self, tag: str) -> list[str]:
        if self.tags is None:
            return []
        return [n for n in self.feature_names if self.tags[n] == tag]

    def select(self, names: Sequence[str]) -> "SurvivalDataset":
        """Dataset restricted to ``names`` in the given order."""
        idx = [self.index_of(n) for n in names]
        tags = None if self.tags is None else {n: self.tags[n] for n in names}
        return SurvivalDataset(self.features[:, idx], tuple(names), self.times, self.events, tags)

    def subset(self, rows) -> "SurvivalDataset":
        rows = np.asarray(rows)
        return SurvivalDataset(
            self.features[rows], self.feature_names, self.times[rows], self.events[rows], self.tags
        )

    def with_column(self, name: str, values) -> "SurvivalDataset":
        """Copy with the values of an existing column replaced."""
        j = self.index_of(name)
        X = self.features.copy()
        X[:, j] = values
        return SurvivalDataset(X, self.feature_names, self.times, self.events, self.tags)

    def schema(self, time="time", event="event") -> Schema:
        if self.tags is None:
            return Schema(time, event, conventional=(), dbm=self.feature_names)
        return Schema(time, event, tuple(self.names_tagged("conventional")),
                      tuple(self.names_tagged("dbm")))

    def equals(self, other: "SurvivalDataset") -> bool:
        return (
            self.feature_names == other.feature_names
            and self.tags == other.tags
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.events, other.events)
        )


def _data_lines(fh) -> Iterable[str]:
    # metadata blocks written by the CLI are '#'-prefixed
    for line in fh:
        if not line.startswith("#"):
            yield line


def load_csv(path, schema: Schema | Mapping) -> SurvivalDataset:
    """Read a survival CSV with a header row; rows keep file order.

    Missing values are an error, never imputed.
    """
    if not isinstance(schema, Schema):
        schema = Schema.from_dict(schema)
    if not schema.feature_columns:
        raise DatasetError("schema names no feature columns")
    with open(path, newline="") as fh:
        reader = csv.reader(_data_lines(fh))
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        if len(set(header)) != len(header):
            dup = next(h for h in header if header.count(h) > 1)
            raise DatasetError("duplicate column name in header", column=dup)
        if len(set(schema.feature_columns)) != len(schema.feature_columns):
            dup = next(c for c in schema.feature_columns if schema.feature_columns.count(c) > 1)
            raise DatasetError("duplicate feature name", column=dup)
        pos = {}
        for c in (schema.time, schema.event) + schema.feature_columns:
            if c not in header:
                raise DatasetError("missing column", column=c)
            pos[c] = header.index(c)
        # features keep header order
        feature_cols = tuple(sorted(schema.feature_columns, key=pos.__getitem__))
        cols = (schema.time, schema.event) + feature_cols
        rows = []
        for r, rec in enumerate(reader, start=1):
            if not rec or all(not v.strip() for v in rec):
                continue
            if len(rec) != len(header):
                raise DatasetError(f"expected {len(header)} fields, got {len(rec)}", row=r)
            vals = []
            for c in cols:
                cell = rec[pos[c]].strip()
                if cell == "":
                    raise DatasetError("missing value", row=r, column=c)
                try:
                    v = float(cell)
                except ValueError:
                    raise DatasetError(f"non-numeric cell {cell!r}", row=r, column=c) from None
                if not math.isfinite(v):
                    raise DatasetError(f"non-finite cell {cell!r}", row=r, column=c)
                vals.append(v)
            t = vals[0]
            if t <= 0:
                raise DatasetError("time must be > 0", row=r, column=schema.time)
            if rec[pos[schema.event]].strip() not in ("0", "1"):
                raise DatasetError("event must be 0 or 1", row=r, column=schema.event)
            rows.append(vals)
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    A = np.array(rows, dtype=float)
    tags = {n: "conventional" for n in schema.conventional}
    tags.update({n: "dbm" for n in schema.dbm})
    return SurvivalDataset(A[:, 2:], feature_cols, A[:, 0], A[:, 1].astype(np.int64), tags)


def _fmt(x: float) -> str:
    # shortest repr round-trips float64 exactly
    return repr(float(x))


def write_csv(ds: SurvivalDataset, path, time="time", event="event", header_lines=()) -> Schema:
    """Write ``ds`` so that ``load_csv(path, returned_schema)`` reproduces it
    bit-exactly. ``header_lines`` are emitted first as ``# `` comments."""
    schema = ds.schema(time, event)
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([time, event, *ds.feature_names])
        for i in range(ds.n_samples):
            w.writerow([_fmt(ds.times[i]), str(int(ds.events[i])),
                        *(_fmt(v) for v in ds.features[i])])
    return schema


def variance_filter(ds: SurvivalDataset, threshold: float = 0.01, protected=()) -> SurvivalDataset:
    """Keep features with sample variance >= ``threshold`` plus every
    protected feature, in original column order."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    protected = set(protected)
    unknown = protected - set(ds.feature_names)
    if unknown:
        raise KeyError(f"protected features not in dataset: {sorted(unknown)}")
    if ds.n_samples > 1:
        var = ds.features.var(axis=0, ddof=1)
    else:
        var = np.zeros(ds.n_features)
    keep = [n for j, n in enumerate(ds.feature_names) if var[j] >= threshold or n in protected]
    return ds.select(keep)


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Equal-width partition ``0 = t_0 < ... < t_d`` of the study time scale.

    Interval ``q`` is ``[t_q, t_{q+1})`` except the last, which is closed on
    the right. Times beyond ``t_d`` are assigned to the last interval.
    """

    boundaries: np.ndarray = field(repr=False)

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=float)
        if b.ndim != 1 or b.size < 3:
            raise ValueError("a grid needs at least 2 intervals")
        if b[0] != 0.0 or not np.all(np.diff(b) > 0):
            raise ValueError("boundaries must start at 0 and be strictly increasing")
        w = np.diff(b)
        if np.max(np.abs(w - w[0])) > 1e-9 * w[0]:
            raise ValueError("intervals must have equal width")
        object.__setattr__(self, "boundaries", _frozen(b, float))

    @classmethod
    def equal_width(cls, d: int, end: float) -> "TimeGrid":
        if d < 2:
            raise ValueError("d must be >= 2")
        if not end > 0:
            raise ValueError("end of study must be > 0")
        return cls(np.linspace(0.0, end, d + 1))

    @property
    def d(self) -> int:
        return self.boundaries.size - 1

    @property
    def end(self) -> float:
        return float(self.boundaries[-1])

    def locate(self, times) -> np.ndarray:
        """0-based interval index of each time."""
        t = np.asarray(times, dtype=float)
        q = np.searchsorted(self.boundaries, t, side="right") - 1
        return np.clip(q, 0, self.d - 1).astype(np.int64)

    def to_dict(self) -> dict:
        return {"d": self.d, "end": self.end}

    @classmethod
    def from_dict(cls, d: Mapping) -> "TimeGrid":
        return cls.equal_width(int(d["d"]), float(d["end"]))


#: relative padding added past the largest time so that it falls strictly
#: inside the last half-open interval
END_PAD = 1e-9


def discretize(ds_or_times, d: int = 16, end: float | None = None):
    """Equal-width grid over ``[0, max time (1 + END_PAD)]``.

    Accepts a :class:`SurvivalDataset` or a bare array of times. Returns
    ``(grid, interval, event)`` with 0-based interval indices; ``event`` is
    ``None`` when bare times are given.
    """
    if d < 2:
        raise ValueError("d must be >= 2")
    if isinstance(ds_or_times, SurvivalDataset):
        times, events = ds_or_times.times, ds_or_times.events
    else:
        times, events = np.asarray(ds_or_times, dtype=float), None
    tmax = float(np.max(times))
    if not tmax > 0:
        raise ValueError("max observed time must be > 0")
    if end is None:
        end = tmax * (1.0 + END_PAD)
    elif end < tmax:
        raise ValueError("end of study precedes the largest observed time")
    grid = TimeGrid.equal_width(d, end)
    return grid, grid.locate(times), (None if events is None else np.array(events))
