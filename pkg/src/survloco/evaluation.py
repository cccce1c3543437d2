"""Concordance, repeated stratified cross-validation and feature-grouping
experiments."""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import cox as _cox
from . import forest as _forest
from .dataset import SurvivalDataset, discretize
from .locomp import OcclusionReport, rank as loco_rank

__all__ = [
    "c_index",
    "stratified_folds",
    "partition_hash",
    "ModelSpec",
    "FeatureGrouping",
    "GROUPING_NAMES",
    "make_groupings",
    "ablate",
    "CIndexReport",
    "repeated_cv",
    "topk_sweep",
]

GROUPING_NAMES = (
    "conventional_only",
    "all_dbm",
    "conventional_plus_all_dbm",
    "top_dbm",
    "conventional_plus_top_dbm",
)


def c_index(risks, times, events) -> float:
    """Harrell's C: over pairs where subject i has an observed event strictly
    before subject j's time, the fraction with risk_i > risk_j (ties 1/2)."""
    r = np.asarray(risks, dtype=float)
    t = np.asarray(times, dtype=float)
    e = np.asarray(events)
    if not r.shape == t.shape == e.shape or r.ndim != 1:
        raise ValueError("risks, times and events must be equal-length vectors")
    if r.size < 2:
        raise ValueError("need at least two subjects")
    first = np.flatnonzero(e == 1)
    comp = t[first, None] < t[None, :]
    n_comp = int(comp.sum())
    if n_comp == 0:
        raise ValueError("no comparable pairs")
    ri = r[first, None]
    score = np.sum(comp & (ri > r[None, :])) + 0.5 * np.sum(comp & (ri == r[None, :]))
    return float(score / n_comp)


def stratified_folds(events, n_folds: int, seed, stratify: bool = True) -> np.ndarray:
    """Fold label per row; with ``stratify`` events and censored rows are
    dealt round-robin separately after a shuffle."""
    events = np.asarray(events)
    if n_folds < 2 or n_folds > events.size:
        raise ValueError("need 2 <= folds <= rows")
    rng = np.random.default_rng(seed)
    fold = np.empty(events.size, dtype=np.int64)
    groups = (np.flatnonzero(events == 1), np.flatnonzero(events != 1)) if stratify \
        else (np.arange(events.size),)
    offset = 0
    for idx in groups:
        idx = idx[rng.permutation(idx.size)]
        fold[idx] = (np.arange(idx.size) + offset) % n_folds
        offset += idx.size
    return fold


def partition_hash(fold: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(fold, dtype=np.int64).tobytes()).hexdigest()[:16]


@dataclass(frozen=True)
class ModelSpec:
    """Risk model for CV cells: ``forest``, ``cox_ridge``, ``cox_lasso`` or
    ``constant``. For Cox, ``lam=None`` tunes lambda by inner 5-fold CV."""

    kind: str = "forest"
    n_trees: int = 500
    min_leaf: int = 5
    mtry: int | None = None
    lam: float | None = None
    d: int = 16

    def __post_init__(self):
        if self.kind not in ("forest", "cox_ridge", "cox_lasso", "constant"):
            raise ValueError(f"unknown model kind {self.kind!r}")

    def fit_predict_risk(self, train: SurvivalDataset, X_test, seed: int) -> np.ndarray:
        if self.kind == "constant":
            return np.zeros(len(X_test))
        if self.kind == "forest":
            grid, _, _ = discretize(train, self.d)
            params = _forest.ForestParams(self.n_trees, self.mtry, self.min_leaf, seed=seed)
            return _forest.fit(train, grid, params).predict_risk(X_test)
        penalty = self.kind[4:]
        lam = self.lam
        if lam is None:
            lam = _cox.select_lambda(train.features, train.times, train.events, penalty, seed=seed)
        model = _cox.fit(train, _cox.Penalty(penalty, lam))
        return model.predict_risk(X_test)


@dataclass(frozen=True)
class FeatureGrouping:
    """Named column set. For top-k groupings ``base`` holds the fixed
    (conventional) part and the remaining columns are the top ``top_k``."""

    name: str
    columns: tuple[str, ...]
    top_k: int | None = None
    base: tuple[str, ...] = ()
    omitted: tuple[str, ...] = ()

    @property
    def label(self) -> str:
        return self.name if self.top_k is None else f"{self.name}[k={self.top_k}]"

    def resolve(self, ranking: Sequence[str] | None = None) -> tuple[str, ...]:
        """Columns, with the top-k part re-derived from ``ranking`` if given."""
        if ranking is None or self.top_k is None:
            return self.columns
        top = [f for f in ranking if f not in self.omitted][: self.top_k]
        return tuple(c for c in self.base if c not in self.omitted) + tuple(top)


def _ranking(source) -> list[str]:
    if isinstance(source, OcclusionReport):
        return loco_rank(source)
    return list(source)


def make_groupings(ds: SurvivalDataset, ranking, k: int = 6,
                   names: Sequence[str] = GROUPING_NAMES) -> list[FeatureGrouping]:
    """The five standard groupings. ``ranking`` is an occlusion report (or
    name list, best first) over DBM features, frozen before any CV."""
    conv = tuple(ds.names_tagged("conventional"))
    dbm = tuple(ds.names_tagged("dbm"))
    ranked = [f for f in _ranking(ranking) if f in dbm] if ranking is not None else []
    if any(n.endswith("top_dbm") for n in names) and k > len(ranked):
        raise ValueError(f"k={k} exceeds the {len(ranked)} ranked DBM features")
    top = tuple(ranked[:k])
    table = {
        "conventional_only": FeatureGrouping("conventional_only", conv),
        "all_dbm": FeatureGrouping("all_dbm", dbm),
        "conventional_plus_all_dbm": FeatureGrouping("conventional_plus_all_dbm", conv + dbm),
        "top_dbm": FeatureGrouping("top_dbm", top, k),
        "conventional_plus_top_dbm": FeatureGrouping("conventional_plus_top_dbm", conv + top, k, conv),
    }
    out = []
    for n in names:
        if n not in table:
            raise ValueError(f"unknown grouping {n!r}")
        if not table[n].columns:
            raise ValueError(f"grouping {n!r} has no columns")
        out.append(table[n])
    return out


def ablate(grouping: FeatureGrouping, omit: Sequence[str]) -> FeatureGrouping:
    """Copy of ``grouping`` without the ``omit`` columns, name suffixed."""
    omit = tuple(omit)
    missing = [c for c in omit if c not in grouping.columns]
    if missing:
        raise ValueError(f"columns not in grouping {grouping.name!r}: {missing}")
    cols = tuple(c for c in grouping.columns if c not in omit)
    if not cols:
        raise ValueError("omission leaves the grouping empty")
    return FeatureGrouping(f"{grouping.name}_minus_{'_'.join(omit)}", cols, grouping.top_k,
                           tuple(c for c in grouping.base if c not in omit),
                           grouping.omitted + omit)


@dataclass(frozen=True, eq=False)
class CIndexReport:
    """One row per (grouping, repeat, fold); ``c`` is nan for missing cells."""

    labels: tuple[str, ...]  # grouping label per cell
    groupings: tuple[str, ...]  # grouping name per cell
    k: tuple[int | None, ...]
    repeat: np.ndarray
    fold: np.ndarray
    c: np.ndarray
    partitions: tuple[str, ...]  # partition hash per cell
    meta: dict = field(default_factory=dict)

    def series(self, label: str) -> np.ndarray:
        return self.c[[i for i, lab in enumerate(self.labels) if lab == label]]

    def label_order(self) -> list[str]:
        return list(dict.fromkeys(self.labels))

    def medians(self) -> dict[str, float]:
        out = {}
        for lab in self.label_order():
            v = self.series(lab)
            v = v[np.isfinite(v)]
            out[lab] = float(np.median(v)) if v.size else float("nan")
        return out

    def n_missing(self) -> dict[str, int]:
        return {lab: int(np.sum(~np.isfinite(self.series(lab)))) for lab in self.label_order()}

    def csv_rows(self) -> list[list]:
        rows = [["grouping", "k", "repeat", "fold", "c_index"]]
        for i in range(self.c.size):
            rows.append([self.groupings[i], "" if self.k[i] is None else self.k[i],
                         int(self.repeat[i]), int(self.fold[i]),
                         "" if not np.isfinite(self.c[i]) else repr(float(self.c[i]))])
        return rows

    def summary(self) -> dict:
        return {"meta": self.meta, "median": self.medians(), "missing": self.n_missing(),
                "cells": {lab: int(self.series(lab).size) for lab in self.label_order()}}

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=1)

    @staticmethod
    def concat(reports: Sequence["CIndexReport"], meta=None) -> "CIndexReport":
        return CIndexReport(
            sum((r.labels for r in reports), ()), sum((r.groupings for r in reports), ()),
            sum((r.k for r in reports), ()), np.concatenate([r.repeat for r in reports]),
            np.concatenate([r.fold for r in reports]), np.concatenate([r.c for r in reports]),
            sum((r.partitions for r in reports), ()), meta or reports[0].meta)


def repeated_cv(ds: SurvivalDataset, groupings: Sequence[FeatureGrouping],
                model: ModelSpec = ModelSpec(), repeats: int = 6, folds: int = 5, seed: int = 0,
                stratify: bool = True, workers: int = 1,
                loco_refit: Callable[[SurvivalDataset, int], Sequence[str]] | None = None
                ) -> CIndexReport:
    """Test-fold C-index for every grouping, repeat and fold.

    Every grouping sees the same partitions within a repeat and the same
    model seed within a cell. With ``loco_refit`` the top-k part of each
    top-k grouping is re-ranked on the training rows of every fold by
    ``loco_refit(train_dbm_dataset, seed)``; otherwise the frozen list is used.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    groupings = list(groupings)
    dbm = ds.names_tagged("dbm")
    jobs = []
    parts = []
    for rep in range(repeats):
        fold = stratified_folds(ds.events, folds, [seed, rep], stratify)
        parts.append(partition_hash(fold))
        for f in range(folds):
            test = np.flatnonzero(fold == f)
            train = np.flatnonzero(fold != f)
            if ds.events[train].sum() == 0:
                raise ValueError(f"repeat {rep} fold {f}: training split has no events")
            cell_seed = int(np.random.SeedSequence([seed, rep, f]).generate_state(1)[0])
            jobs.append((rep, f, train, test, cell_seed))

    def cell(job):
        rep, f, train, test, cell_seed = job
        tr = ds.subset(train)
        ranking = None
        if loco_refit is not None and any(g.top_k is not None for g in groupings):
            ranking = list(loco_refit(tr.select(dbm), cell_seed))
        out = []
        for g in groupings:
            cols = g.resolve(ranking)
            idx = [ds.index_of(c) for c in cols]
            risk = model.fit_predict_risk(tr.select(cols), ds.features[np.ix_(test, idx)], cell_seed)
            try:
                c = c_index(risk, ds.times[test], ds.events[test])
            except ValueError:
                c = float("nan")
            out.append(c)
        return out

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(cell, jobs))
    else:
        results = [cell(j) for j in jobs]

    labels, names, ks, reps, fds, cs, hs = [], [], [], [], [], [], []
    for gi, g in enumerate(groupings):
        for (rep, f, *_), res in zip(jobs, results):
            labels.append(g.label)
            names.append(g.name)
            ks.append(g.top_k)
            reps.append(rep)
            fds.append(f)
            cs.append(res[gi])
            hs.append(parts[rep])
    meta = {"model": asdict(model), "repeats": repeats, "folds": folds, "seed": seed,
            "stratify": stratify, "refit_loco_per_fold": loco_refit is not None}
    return CIndexReport(tuple(labels), tuple(names), tuple(ks), np.array(reps), np.array(fds),
                        np.array(cs, dtype=float), tuple(hs), meta)


def topk_sweep(ds: SurvivalDataset, ranking, k_range: Sequence[int],
               model: ModelSpec = ModelSpec(), names=("top_dbm", "conventional_plus_top_dbm"),
               **cv) -> CIndexReport:
    """Repeated CV of the top-k groupings at each ``k``; one report, cells
    labelled ``name[k=..]``."""
    k_range = list(k_range)
    n_dbm = len(ds.names_tagged("dbm"))
    if not k_range or max(k_range) > n_dbm or min(k_range) < 1:
        raise ValueError(f"k values must lie in 1..{n_dbm}")
    groupings = [g for k in k_range for g in make_groupings(ds, ranking, k, names)]
    return repeated_cv(ds, groupings, model, **cv)
