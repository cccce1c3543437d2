"""Leave-one-covariate-out importance from minipatch ensembles (LOCO-MP).

Each minipatch trains a backend on a random block of ``n`` rows and ``m``
columns and predicts hazard curves for every row it did not see. For row
``i`` the ensemble prediction averages the curves of all patches that left
``i`` out; the occluded prediction for feature ``j`` averages only those
patches that also left ``j`` out. The occlusion score of ``(i, j)`` is the
loss of the occluded prediction minus the loss of the full one, and a
feature's score is the mean over rows.

Only two running sums are kept per row: over every patch excluding ``i``,
and over the patches excluding ``i`` that *included* ``j``. Their difference
gives the occluded sum, so memory stays at ``N x M x d``.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Protocol, Sequence

import numpy as np
from scipy import stats

from . import cox as _cox
from . import forest as _forest
from .dataset import SurvivalDataset, TimeGrid
from .errors import CensoringSaturationError
from .hazard import interval_nll

__all__ = [
    "MiniPatch",
    "Backend",
    "ForestBackend",
    "CoxBackend",
    "ConstantBackend",
    "make_backend",
    "OcclusionReport",
    "default_patch_shape",
    "sample_minipatches",
    "run",
    "rank",
]

log = logging.getLogger(__name__)

MIN_PATCHES = 5
MAX_SKIP_FRACTION = 0.5


@dataclass(frozen=True, eq=False)
class MiniPatch:
    index: int
    rows: np.ndarray  # sorted row indices I_k
    cols: np.ndarray  # sorted column indices F_k
    seed: int  # seed handed to the backend fit


def default_patch_shape(N: int, M: int) -> tuple[int, int]:
    """``n = N // 5`` rows and ``m = round(sqrt(M))`` columns."""
    return max(1, N // 5), min(M, max(1, round(math.sqrt(M))))


def sample_minipatches(N: int, M: int, n: int, m: int, K: int, seed: int = 0) -> list[MiniPatch]:
    """``K`` patches, each drawn uniformly without replacement from its own
    stream seeded by ``(seed, k)``."""
    if not 1 <= n < N:
        raise ValueError(f"need 1 <= n < N, got n={n}, N={N}")
    if not 1 <= m <= M:
        raise ValueError(f"need 1 <= m <= M, got m={m}, M={M}")
    if K < 1:
        raise ValueError("K must be >= 1")
    out = []
    for k in range(K):
        rng = np.random.default_rng([seed, k])
        rows = np.sort(rng.choice(N, n, replace=False))
        cols = np.sort(rng.choice(M, m, replace=False))
        out.append(MiniPatch(k, rows, cols, int(rng.integers(2**63))))
    return out


class Backend(Protocol):
    """Anything that can fit on a patch and return hazard curves (rows x d)."""

    def fit_predict(self, X, interval, event, times, X_new, grid: TimeGrid, seed: int) -> np.ndarray:
        ...

    def to_dict(self) -> dict:
        ...


@dataclass(frozen=True)
class ForestBackend:
    n_trees: int = 50
    min_leaf: int = 3
    mtry: int | None = None

    def fit_predict(self, X, interval, event, times, X_new, grid, seed):
        params = _forest.ForestParams(self.n_trees, self.mtry, self.min_leaf, seed=seed)
        return _forest.fit_arrays(X, interval, event, grid, params).predict_hazard(X_new)

    def to_dict(self):
        return {"kind": "forest", **asdict(self)}


@dataclass(frozen=True)
class CoxBackend:
    """Penalized Cox with a fixed lambda (no inner tuning inside patches)."""

    penalty: str = "ridge"
    lam: float = 0.1

    def fit_predict(self, X, interval, event, times, X_new, grid, seed):
        model = _cox.fit_arrays(X, times, event, _cox.Penalty(self.penalty, self.lam))
        return model.predict_hazard(X_new, grid)

    def to_dict(self):
        return {"kind": f"cox_{self.penalty}", "lam": self.lam}


@dataclass(frozen=True)
class ConstantBackend:
    """Same hazard for everyone; a null reference that ignores features."""

    hazard: float = 0.05

    def fit_predict(self, X, interval, event, times, X_new, grid, seed):
        return np.full((len(X_new), grid.d), self.hazard)

    def to_dict(self):
        return {"kind": "constant", "hazard": self.hazard}


def make_backend(spec: dict | str) -> Backend:
    """Backend from ``{"kind": ..., **params}``; kind is forest, cox_ridge,
    cox_lasso or constant."""
    if isinstance(spec, str):
        spec = {"kind": spec}
    spec = dict(spec)
    kind = spec.pop("kind", "forest")
    if kind == "forest":
        return ForestBackend(**spec)
    if kind in ("cox_ridge", "cox_lasso"):
        return CoxBackend(kind[4:], **spec)
    if kind == "constant":
        return ConstantBackend(**spec)
    raise ValueError(f"unknown backend kind {kind!r}")


@dataclass(frozen=True, eq=False)
class OcclusionReport:
    feature_names: tuple[str, ...]
    delta: np.ndarray  # mean occlusion score per feature
    rank: np.ndarray  # 1 = most important
    n_obs: np.ndarray  # rows contributing to each feature's mean
    delta_ij: np.ndarray = field(repr=False)  # N x M, nan where a row was dropped
    count_all: np.ndarray = field(repr=False)  # patches excluding row i
    count_excl: np.ndarray = field(repr=False)  # patches excluding row i and feature j
    ci_low: np.ndarray = field(repr=False)
    ci_high: np.ndarray = field(repr=False)
    skipped: tuple[int, ...] = ()
    meta: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def order(self) -> np.ndarray:
        """Feature indices from rank 1 down."""
        return np.argsort(self.rank, kind="stable")

    def to_dict(self) -> dict:
        nan_list = lambda a: [None if not np.isfinite(v) else float(v) for v in np.ravel(a)]
        return {
            "meta": self.meta,
            "feature_names": list(self.feature_names),
            "delta": nan_list(self.delta),
            "rank": self.rank.tolist(),
            "n_obs": self.n_obs.tolist(),
            "ci_low": nan_list(self.ci_low),
            "ci_high": nan_list(self.ci_high),
            "count_all": self.count_all.tolist(),
            "count_excl": self.count_excl.tolist(),
            "delta_ij": [nan_list(row) for row in self.delta_ij],
            "skipped": list(self.skipped),
        }

    @classmethod
    def from_dict(cls, d) -> "OcclusionReport":
        f = lambda v: np.array([np.nan if x is None else x for x in v], dtype=float)
        return cls(
            tuple(d["feature_names"]), f(d["delta"]), np.asarray(d["rank"], dtype=np.int64),
            np.asarray(d["n_obs"], dtype=np.int64),
            np.array([f(r) for r in d["delta_ij"]]).reshape(len(d["count_all"]), -1),
            np.asarray(d["count_all"], dtype=np.int64),
            np.asarray(d["count_excl"], dtype=np.int64).reshape(len(d["count_all"]), -1),
            f(d["ci_low"]), f(d["ci_high"]), tuple(d["skipped"]), dict(d["meta"]),
        )

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def from_json(cls, path) -> "OcclusionReport":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def csv_rows(self) -> list[list]:
        rows = [["rank", "feature", "delta", "ci_low", "ci_high", "n_obs",
                 "min_patches_excl", "median_patches_excl"]]
        for j in self.order():
            used = np.isfinite(self.delta_ij[:, j])
            cnt = self.count_excl[used, j]
            rows.append([
                int(self.rank[j]), self.feature_names[j], repr(float(self.delta[j])),
                repr(float(self.ci_low[j])), repr(float(self.ci_high[j])), int(self.n_obs[j]),
                int(cnt.min()) if cnt.size else 0,
                repr(float(np.median(cnt))) if cnt.size else "nan",
            ])
        return rows


def _ordinal_ranks(delta) -> np.ndarray:
    """Descending by score, ties by index; nan scores go last."""
    key = np.where(np.isfinite(delta), -delta, np.inf)
    order = np.lexsort((np.arange(delta.size), key))
    ranks = np.empty(delta.size, dtype=np.int64)
    ranks[order] = np.arange(1, delta.size + 1)
    return ranks


def _fit_chunk(backend, X, interval, event, times, grid, chunk):
    out = []
    N = X.shape[0]
    for p in chunk:
        mask = np.ones(N, dtype=bool)
        mask[p.rows] = False
        oop = np.flatnonzero(mask)
        Xp = np.ascontiguousarray(X[np.ix_(p.rows, p.cols)])
        Xo = np.ascontiguousarray(X[np.ix_(oop, p.cols)])
        H = backend.fit_predict(Xp, interval[p.rows], event[p.rows], times[p.rows], Xo, grid, p.seed)
        out.append((p, oop, np.asarray(H, dtype=float)))
    return out


def run(ds: SurvivalDataset, grid: TimeGrid, backend: Backend | None = None,
        patches: Sequence[MiniPatch] | None = None, *, n: int | None = None,
        m: int | None = None, K: int = 10000, seed: int = 0, workers: int = 1,
        min_patches: int = MIN_PATCHES, level: float = 0.95, chunk_size: int = 32) -> OcclusionReport:
    """Occlusion scores for every feature of ``ds``.

    Patches are drawn with :func:`sample_minipatches` unless given. Patches
    whose rows hold no events are skipped; if more than half are skipped
    :class:`CensoringSaturationError` is raised before any fitting. A row
    enters feature ``j``'s mean only when both of its ensembles average at
    least ``min_patches`` patches. Output does not depend on ``workers``.
    """
    backend = ForestBackend() if backend is None else backend
    N, M = ds.n_samples, ds.n_features
    if patches is None:
        dn, dm = default_patch_shape(N, M)
        patches = sample_minipatches(N, M, n or dn, m or dm, K, seed)
    patches = list(patches)
    if not patches:
        raise ValueError("no minipatches")
    X = np.ascontiguousarray(ds.features)
    interval = grid.locate(ds.times)
    event = np.ascontiguousarray(ds.events)
    times = np.ascontiguousarray(ds.times)
    for p in patches:
        if p.rows.max(initial=-1) >= N or p.cols.max(initial=-1) >= M:
            raise ValueError(f"patch {p.index} indexes outside the dataset")

    skipped = tuple(p.index for p in patches if event[p.rows].sum() == 0)
    for k in skipped:
        log.info("minipatch %d has no events; skipped", k)
    if len(skipped) > MAX_SKIP_FRACTION * len(patches):
        raise CensoringSaturationError(
            f"{len(skipped)} of {len(patches)} minipatches contain no events",
            n_skipped=len(skipped), n_patches=len(patches))
    skip = set(skipped)
    todo = [p for p in patches if p.index not in skip]
    chunks = [todo[i:i + chunk_size] for i in range(0, len(todo), chunk_size)]

    d = grid.d
    S_all = np.zeros((N, d))
    S_inc = np.zeros((N, M, d))
    c_all = np.zeros(N, dtype=np.int64)
    c_inc = np.zeros((N, M), dtype=np.int64)
    ref = None

    def fit(chunk):
        return _fit_chunk(backend, X, interval, event, times, grid, chunk)

    if workers > 1 and len(chunks) > 1:
        pool = ThreadPoolExecutor(max_workers=workers)
        results = pool.map(fit, chunks)
    else:
        pool = None
        results = map(fit, chunks)
    try:
        for chunk_out in results:
            for p, oop, H in chunk_out:
                if ref is None:
                    # sums are kept relative to one fixed curve, which keeps
                    # them small and exact for feature-blind predictors
                    ref = H.mean(axis=0)
                dev = H - ref
                S_all[oop] += dev
                c_all[oop] += 1
                S_inc[np.ix_(oop, p.cols)] += dev[:, None, :]
                c_inc[np.ix_(oop, p.cols)] += 1
    finally:
        if pool is not None:
            pool.shutdown()
    if ref is None:
        ref = np.zeros(d)

    c_exc = c_all[:, None] - c_inc
    ok_all = c_all >= min_patches
    ok = ok_all[:, None] & (c_exc >= min_patches)
    with np.errstate(invalid="ignore", divide="ignore"):
        mu_all = ref + S_all / c_all[:, None]
        mu_exc = ref + (S_all[:, None, :] - S_inc) / c_exc[:, :, None]
    loss_all = np.full(N, np.nan)
    rows = np.flatnonzero(ok_all)
    loss_all[rows] = interval_nll(mu_all[rows], interval[rows], event[rows])
    delta_ij = np.full((N, M), np.nan)
    ii, jj = np.nonzero(ok)
    delta_ij[ii, jj] = interval_nll(mu_exc[ii, jj], interval[ii], event[ii]) - loss_all[ii]

    n_obs = ok.sum(axis=0)
    delta = np.full(M, np.nan)
    sd = np.full(M, np.nan)
    for j in range(M):
        v = delta_ij[ok[:, j], j]
        if v.size:
            delta[j] = v.mean()
            sd[j] = v.std(ddof=1) if v.size > 1 else 0.0
        else:
            log.warning("feature %s has no rows meeting the %d-patch floor",
                        ds.feature_names[j], min_patches)
    half = stats.norm.ppf(0.5 + level / 2) * sd / np.sqrt(np.maximum(n_obs, 1))

    n_p, m_p = patches[0].rows.size, patches[0].cols.size
    meta = {
        "K": len(patches), "n": int(n_p), "m": int(m_p), "seed": seed,
        "backend": backend.to_dict(), "min_patches": min_patches,
        "n_skipped": len(skipped), "grid_d": d,
    }
    return OcclusionReport(ds.feature_names, delta, _ordinal_ranks(delta), n_obs, delta_ij,
                           c_all, c_exc, delta - half, delta + half, skipped, meta)


def rank(report: OcclusionReport, top_k: int | None = None) -> list[str]:
    """Feature names by descending score, ties broken by feature index."""
    M = report.n_features
    top_k = M if top_k is None else top_k
    if not 0 <= top_k <= M:
        raise ValueError(f"top_k must be in 0..{M}")
    return [report.feature_names[j] for j in report.order()[:top_k]]
