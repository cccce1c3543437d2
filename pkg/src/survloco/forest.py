"""Random survival forest with log-rank splitting on a discrete time grid.

Leaves store per-interval event and at-risk counts of their in-bag rows, so a
leaf hazard is ``events / at_risk`` per interval and forest predictions plug
straight into :func:`survloco.hazard.interval_nll`.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import _trees
from .dataset import SurvivalDataset, TimeGrid
from .errors import NoEventsError
from .hazard import EPS_CLIP, HazardCurve

__all__ = [
    "ForestParams",
    "SurvivalTree",
    "Forest",
    "fit",
    "fit_arrays",
    "predict_hazard",
    "predict_risk",
    "rf_importance",
    "risk_from_hazard",
]


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 500
    mtry: int | None = None  # None: ceil(sqrt(M))
    min_leaf: int = 5
    max_depth: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError("mtry must be >= 1")

    def resolved_mtry(self, n_features: int) -> int:
        if self.mtry is None:
            return max(1, math.ceil(math.sqrt(n_features)))
        return min(self.mtry, n_features)


@dataclass(frozen=True, eq=False)
class SurvivalTree:
    """One tree in local indexing: children and leaf rows are relative."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_events: np.ndarray
    leaf_at_risk: np.ndarray

    @property
    def leaf_hazard(self) -> np.ndarray:
        return _trees.leaf_hazards(self.leaf_events, self.leaf_at_risk)

    def apply(self, x) -> int:
        """Leaf row reached by feature vector ``x``."""
        node = 0
        while self.feature[node] >= 0:
            node = self.left[node] if x[self.feature[node]] <= self.threshold[node] else self.right[node]
        return int(self.left[node])


def tree_seeds(seed: int, n_trees: int) -> np.ndarray:
    return np.random.SeedSequence(seed).generate_state(n_trees, dtype=np.uint64)


class Forest:
    """Fitted forest. Use :func:`fit` to construct."""

    def __init__(self, feature, threshold, left, right, leaf_events, leaf_at_risk,
                 node_start, leaf_start, inbag, grid: TimeGrid, params: ForestParams,
                 n_features: int):
        self.feature = feature
        self.threshold = threshold
        self.left = left
        self.right = right
        self.leaf_events = leaf_events
        self.leaf_at_risk = leaf_at_risk
        self.node_start = node_start
        self.leaf_start = leaf_start
        self.inbag = inbag
        self.grid = grid
        self.params = params
        self.n_features = n_features
        self.leaf_h = _trees.leaf_hazards(leaf_events, leaf_at_risk)

    @property
    def n_trees(self) -> int:
        return self.node_start.size - 1

    def tree(self, t: int) -> SurvivalTree:
        a, b = self.node_start[t], self.node_start[t + 1]
        la, lb = self.leaf_start[t], self.leaf_start[t + 1]
        return SurvivalTree(self.feature[a:b], self.threshold[a:b], self.left[a:b],
                            self.right[a:b], self.leaf_events[la:lb], self.leaf_at_risk[la:lb])

    def _check(self, X):
        X = np.ascontiguousarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(
                f"expected rows with {self.n_features} features, got shape {X.shape}"
            )
        return X

    def predict_hazard(self, X) -> np.ndarray:
        """Tree-averaged (unclipped) hazard matrix, one row per row of X."""
        X = self._check(X)
        return _trees.predict_forest(X, self.feature, self.threshold, self.left, self.right,
                                     self.node_start, self.leaf_start, self.leaf_h)

    def predict_risk(self, X) -> np.ndarray:
        return risk_from_hazard(self.predict_hazard(X))

    def to_dict(self) -> dict:
        return {
            "kind": "random_survival_forest",
            "params": asdict(self.params),
            "grid": self.grid.to_dict(),
            "n_features": self.n_features,
            "trees": [
                {
                    "feature": tr.feature.tolist(),
                    "threshold": tr.threshold.tolist(),
                    "left": tr.left.tolist(),
                    "right": tr.right.tolist(),
                    "leaf_events": tr.leaf_events.tolist(),
                    "leaf_at_risk": tr.leaf_at_risk.tolist(),
                    "inbag": self.inbag[t].tolist(),
                }
                for t, tr in enumerate(self.tree(t) for t in range(self.n_trees))
            ],
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def from_dict(cls, d) -> "Forest":
        trees = d["trees"]
        cat = lambda key, dtype: np.concatenate([np.asarray(t[key], dtype=dtype) for t in trees])
        grid = TimeGrid.from_dict(d["grid"])
        node_start = np.cumsum([0] + [len(t["feature"]) for t in trees]).astype(np.int64)
        leaf_start = np.cumsum([0] + [len(t["leaf_events"]) for t in trees]).astype(np.int64)
        ev = np.concatenate([np.asarray(t["leaf_events"], float).reshape(-1, grid.d) for t in trees])
        ar = np.concatenate([np.asarray(t["leaf_at_risk"], float).reshape(-1, grid.d) for t in trees])
        return cls(cat("feature", np.int64), cat("threshold", float), cat("left", np.int64),
                   cat("right", np.int64), ev, ar, node_start, leaf_start,
                   np.array([t["inbag"] for t in trees], dtype=np.int64), grid,
                   ForestParams(**d["params"]), int(d["n_features"]))

    @classmethod
    def from_json(cls, path) -> "Forest":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def fit_arrays(X, interval, event, grid: TimeGrid, params: ForestParams = ForestParams()) -> Forest:
    """Fit on raw arrays; ``interval`` holds 0-based grid indices."""
    X = np.ascontiguousarray(X, dtype=float)
    interval = np.ascontiguousarray(interval, dtype=np.int64)
    event = np.ascontiguousarray(event, dtype=np.int64)
    n, p = X.shape
    if event.sum() == 0:
        raise NoEventsError("cannot grow survival trees without observed events")
    if n < 2 * params.min_leaf:
        raise ValueError(f"need at least {2 * params.min_leaf} rows, got {n}")
    seeds = tree_seeds(params.seed, params.n_trees)
    inbag, grow = _trees.bootstrap_counts(n, seeds)
    max_depth = -1 if params.max_depth is None else params.max_depth
    out = _trees.grow_forest(X, interval, event, inbag, grid.d, params.resolved_mtry(p),
                             params.min_leaf, max_depth, grow)
    return Forest(*out, inbag=inbag, grid=grid, params=params, n_features=p)


def fit(ds: SurvivalDataset, grid: TimeGrid, params: ForestParams = ForestParams()) -> Forest:
    """Grow ``params.n_trees`` bootstrap trees; deterministic given the seed."""
    return fit_arrays(ds.features, grid.locate(ds.times), ds.events, grid, params)


def risk_from_hazard(H, eps: float = EPS_CLIP) -> np.ndarray:
    """Mortality score: sum over intervals of the cumulative clipped hazard."""
    H = np.clip(np.atleast_2d(np.asarray(H, dtype=float)), eps, 1 - eps)
    return np.cumsum(H, axis=1).sum(axis=1)


def predict_hazard(forest: Forest, x) -> HazardCurve:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("x must be a single feature row")
    return HazardCurve(forest.predict_hazard(x[None, :])[0])


def predict_risk(forest: Forest, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("x must be a single feature row")
    return float(forest.predict_risk(x[None, :])[0])


def permutation_seeds(seed: int, n_trees: int, n_features: int) -> np.ndarray:
    """Seed of the OOB shuffle for every (tree, feature) pair."""
    ss = np.random.SeedSequence([seed, 0x5EED])
    return ss.generate_state(n_trees * n_features, dtype=np.uint64).reshape(n_trees, n_features)


def rf_importance(forest: Forest, ds: SurvivalDataset, seed: int = 0) -> np.ndarray:
    """Out-of-bag permutation importance under the discrete hazard loss.

    For each tree and feature, the increase in mean OOB loss after shuffling
    that feature among the tree's OOB rows; averaged over trees that have
    OOB rows. Features never split on score exactly 0.
    """
    if ds.n_samples != forest.inbag.shape[1] or ds.n_features != forest.n_features:
        raise ValueError("forest was not fit on this dataset")
    X = np.ascontiguousarray(ds.features)
    interval = forest.grid.locate(ds.times)
    scores, used = _trees.oob_permutation_importance(
        X, interval, np.ascontiguousarray(ds.events), forest.inbag, forest.feature,
        forest.threshold, forest.left, forest.right, forest.node_start, forest.leaf_start,
        forest.leaf_h, permutation_seeds(seed, forest.n_trees, ds.n_features), EPS_CLIP)
    if used == 0:
        raise ValueError("no tree has out-of-bag rows")
    return scores
