"""Stability checks for a feature-importance method: rank distributions over
subsamples, top-k Jaccard agreement and permutation pseudo-null p-values.

The method under study is a *scorer*: ``scorer(ds, seed) -> scores`` with
one score per feature, larger meaning more important. :func:`loco_scorer`
and :func:`rfimp_scorer` build the two standard ones.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import forest as _forest
from . import locomp
from .dataset import SurvivalDataset, discretize
from .errors import CensoringSaturationError

__all__ = [
    "Scorer",
    "loco_scorer",
    "rfimp_scorer",
    "competition_ranks",
    "RankDistribution",
    "PermutationResult",
    "subsample_ranks",
    "jaccard",
    "jaccard_curve",
    "permutation_test",
    "compare_importance",
]

log = logging.getLogger(__name__)

Scorer = Callable[[SurvivalDataset, int], np.ndarray]


def loco_scorer(backend: locomp.Backend | None = None, K: int = 10000, d: int = 16,
                n: int | None = None, m: int | None = None, workers: int = 1) -> Scorer:
    """Occlusion scores; the grid and patch shape follow the data passed in."""
    def score(ds: SurvivalDataset, seed: int) -> np.ndarray:
        grid, _, _ = discretize(ds, d)
        return locomp.run(ds, grid, backend, n=n, m=m, K=K, seed=seed, workers=workers).delta
    return score


def rfimp_scorer(params: _forest.ForestParams = _forest.ForestParams(), d: int = 16) -> Scorer:
    """Out-of-bag permutation importance of a forest fit with the given seed."""
    def score(ds: SurvivalDataset, seed: int) -> np.ndarray:
        grid, _, _ = discretize(ds, d)
        p = _forest.ForestParams(params.n_trees, params.mtry, params.min_leaf, params.max_depth, seed)
        return _forest.rf_importance(_forest.fit(ds, grid, p), ds, seed)
    return score


def competition_ranks(scores) -> np.ndarray:
    """1 + number of strictly better scores; nan counts as worst."""
    s = np.where(np.isfinite(scores), scores, -np.inf)
    return 1 + np.sum(s[None, :] > s[:, None], axis=1)


def _seed(*entropy) -> int:
    return int(np.random.SeedSequence(list(entropy)).generate_state(1, dtype=np.uint64)[0] >> 1)


@dataclass(frozen=True, eq=False)
class RankDistribution:
    feature_names: tuple[str, ...]
    full_rank: np.ndarray
    full_score: np.ndarray
    ranks: np.ndarray  # (B_ok, M) subsample ranks
    scores: np.ndarray  # (B_ok, M)
    subsample_ids: tuple[int, ...]  # which subsamples succeeded
    frac: float
    B: int
    seed: int
    failures: tuple[tuple[int, str], ...] = ()

    @property
    def median_rank(self) -> np.ndarray:
        return np.median(self.ranks, axis=0)

    @property
    def median_score(self) -> np.ndarray:
        return np.median(self.scores, axis=0)

    def iqr(self) -> np.ndarray:
        q75, q25 = np.percentile(self.ranks, [75, 25], axis=0)
        return q75 - q25

    def full_order(self) -> np.ndarray:
        return np.lexsort((np.arange(len(self.feature_names)), self.full_rank))

    def top_k(self, k: int, b: int | None = None) -> set[str]:
        """Top-``k`` features of the full run, or of subsample row ``b``."""
        r = self.full_rank if b is None else self.ranks[b]
        order = np.lexsort((np.arange(r.size), r))
        return {self.feature_names[j] for j in order[:k]}

    def table_rows(self) -> list[list]:
        """Rank, score, median subsample rank and score; best first."""
        rows = [["feature", "rank", "delta", "median_rank", "median_delta"]]
        mr, ms = self.median_rank, self.median_score
        for j in self.full_order():
            rows.append([self.feature_names[j], int(self.full_rank[j]), repr(float(self.full_score[j])),
                         repr(float(mr[j])), repr(float(ms[j]))])
        return rows

    def long_rows(self) -> list[list]:
        rows = [["feature", "source", "rank", "delta"]]
        for j, name in enumerate(self.feature_names):
            rows.append([name, "full", int(self.full_rank[j]), repr(float(self.full_score[j]))])
            for b, sid in enumerate(self.subsample_ids):
                rows.append([name, f"subsample_{sid}", int(self.ranks[b, j]),
                             repr(float(self.scores[b, j]))])
        return rows


@dataclass(frozen=True)
class PermutationResult:
    feature: str
    original_rank: int
    permuted_ranks: tuple[int, ...]
    failures: tuple[tuple[int, str], ...] = field(default=())

    @property
    def P(self) -> int:
        return len(self.permuted_ranks)

    @property
    def p_value(self) -> float:
        hits = sum(r <= self.original_rank for r in self.permuted_ranks)
        return (1 + hits) / (self.P + 1)


def _map(fn, items, workers):
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _guarded(scorer, ds, seed):
    try:
        return scorer(ds, seed), None
    except CensoringSaturationError as exc:
        return None, str(exc)


def subsample_ranks(ds: SurvivalDataset, scorer: Scorer, B: int = 10, frac: float = 0.8,
                    seed: int = 0, workers: int = 1) -> RankDistribution:
    """Score the full data and ``B`` subsamples of ``round(frac * N)`` rows
    drawn without replacement. Every run uses the same scorer seed, so with
    ``frac=1`` each subsample reproduces the full run. Subsamples whose run
    aborts on censoring saturation are recorded; more than ``B/2`` of them
    is an error."""
    if B < 1:
        raise ValueError("B must be >= 1")
    if not 0 < frac <= 1:
        raise ValueError("frac must lie in (0, 1]")
    N = ds.n_samples
    size = int(round(frac * N))
    if size < 2:
        raise ValueError("subsample too small")
    s = _seed(seed, 0)
    full = scorer(ds, s)

    def job(b):
        rows = np.sort(np.random.default_rng([seed, 1, b]).choice(N, size, replace=False))
        return _guarded(scorer, ds.subset(rows), s)

    out = _map(job, range(B), workers)
    ok = [b for b, (sc, _) in enumerate(out) if sc is not None]
    failures = tuple((b, msg) for b, (sc, msg) in enumerate(out) if sc is None)
    for b, msg in failures:
        log.warning("subsample %d aborted: %s", b, msg)
    if len(failures) > B / 2:
        raise CensoringSaturationError(f"{len(failures)} of {B} subsample runs aborted",
                                       n_skipped=len(failures), n_patches=B)
    scores = np.array([out[b][0] for b in ok]).reshape(len(ok), ds.n_features)
    ranks = np.array([competition_ranks(sc) for sc in scores]).reshape(len(ok), ds.n_features)
    return RankDistribution(ds.feature_names, competition_ranks(full), np.asarray(full), ranks,
                            scores, tuple(ok), frac, B, seed, failures)


def jaccard(a, b) -> float:
    """|a & b| / |a | b|; two empty sets count as identical (1.0)."""
    a, b = set(a), set(b)
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def jaccard_curve(dist: RankDistribution, k_max: int, k_min: int = 1) -> list[tuple[int, float, float]]:
    """``(k, mean J, median J)`` of full-data vs subsample top-k sets."""
    M = len(dist.feature_names)
    if not 1 <= k_min <= k_max <= M:
        raise ValueError(f"need 1 <= k_min <= k_max <= {M}")
    out = []
    for k in range(k_min, k_max + 1):
        ref = dist.top_k(k)
        J = np.array([jaccard(ref, dist.top_k(k, b)) for b in range(dist.ranks.shape[0])])
        out.append((k, float(J.mean()), float(np.median(J))))
    return out


def permutation_test(ds: SurvivalDataset, scorer: Scorer, features: Sequence[str], P: int = 25,
                     seed: int = 0, shared_patches: bool = False, workers: int = 1
                     ) -> list[PermutationResult]:
    """Pseudo-null ranks: for each feature, ``P`` reruns with only that
    column shuffled across rows. Each rerun gets a fresh scorer seed unless
    ``shared_patches`` is set, in which case the original run's seed (and
    hence its minipatches) is reused."""
    if P < 1:
        raise ValueError("P must be >= 1")
    for f in features:
        ds.index_of(f)
    s0 = _seed(seed, 0)
    original = competition_ranks(scorer(ds, s0))
    results = []
    for fi, f in enumerate(features):
        col = ds.column(f)

        def job(p, fi=fi, f=f, col=col):
            perm = np.random.default_rng([seed, 2, fi, p]).permutation(col.size)
            s = s0 if shared_patches else _seed(seed, 3, fi, p)
            sc, msg = _guarded(scorer, ds.with_column(f, col[perm]), s)
            return (None, msg) if sc is None else (int(competition_ranks(sc)[ds.index_of(f)]), None)

        out = _map(job, range(P), workers)
        ranks = tuple(r for r, _ in out if r is not None)
        failures = tuple((p, msg) for p, (r, msg) in enumerate(out) if r is None)
        if not ranks:
            raise CensoringSaturationError(f"every permutation run of {f!r} aborted",
                                           n_skipped=P, n_patches=P)
        results.append(PermutationResult(f, int(original[ds.index_of(f)]), ranks, failures))
    return results


def compare_importance(a: RankDistribution, b: RankDistribution,
                       labels: tuple[str, str] = ("loco_mp", "rf_imp")) -> dict:
    """Per-feature interquartile range of subsample ranks under two methods
    and the median IQR of each; ``rows`` is the paired long-format data."""
    if a.feature_names != b.feature_names:
        raise ValueError("rank distributions cover different features")
    ia, ib = a.iqr(), b.iqr()
    rows = [["feature", "method", "subsample", "rank"]]
    for dist, lab in ((a, labels[0]), (b, labels[1])):
        for j, name in enumerate(dist.feature_names):
            for bi, sid in enumerate(dist.subsample_ids):
                rows.append([name, lab, sid, int(dist.ranks[bi, j])])
    return {
        "features": list(a.feature_names),
        "iqr": {labels[0]: ia, labels[1]: ib},
        "median_iqr": {labels[0]: float(np.median(ia)), labels[1]: float(np.median(ib))},
        "rows": rows,
    }
