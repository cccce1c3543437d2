import itertools

import numpy as np
import pytest

from survloco import locomp, synth
from survloco.dataset import SurvivalDataset, discretize
from survloco.errors import CensoringSaturationError
from survloco.hazard import HazardCurve, ObservedOutcome, nll


def tiny_ds(seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(8, 3))
    t = rng.exponential(np.exp(-X[:, 0])) + 0.05
    e = np.array([1, 1, 0, 1, 0, 0, 1, 0])  # 4 censored, so 3 patches are event-free
    return SurvivalDataset(X, ["a", "b", "c"], t, e)


def all_patches(N, M, n, m, seed=0):
    out = []
    for k, (rows, cols) in enumerate(itertools.product(itertools.combinations(range(N), n),
                                                       itertools.combinations(range(M), m))):
        out.append(locomp.MiniPatch(k, np.array(rows), np.array(cols), seed * 1000 + k))
    return out


def brute_force_delta(ds, grid, backend, patches, min_patches=5):
    """Materialize every out-of-patch prediction, then average the curve
    lists for each (i, j) explicitly."""
    N, M = ds.n_samples, ds.n_features
    q = grid.locate(ds.times)
    preds = {}
    for p in patches:
        if ds.events[p.rows].sum() == 0:
            continue
        out = np.setdiff1d(np.arange(N), p.rows)
        H = backend.fit_predict(ds.features[np.ix_(p.rows, p.cols)], q[p.rows], ds.events[p.rows],
                                ds.times[p.rows], ds.features[np.ix_(out, p.cols)], grid, p.seed)
        for r, i in enumerate(out):
            preds.setdefault(i, []).append((set(p.cols.tolist()), H[r]))
    delta = np.zeros(M)
    for j in range(M):
        vals = []
        for i in range(N):
            full = [h for _, h in preds.get(i, [])]
            excl = [h for cols, h in preds.get(i, []) if j not in cols]
            if len(full) < min_patches or len(excl) < min_patches:
                continue
            obs = ObservedOutcome.from_interval(q[i], ds.events[i])
            mu_full = sum(full) / len(full)
            mu_excl = sum(excl) / len(excl)
            vals.append(nll(HazardCurve(mu_excl), obs) - nll(HazardCurve(mu_full), obs))
        delta[j] = np.mean(vals)
    return delta


@pytest.mark.parametrize("backend", [
    locomp.ForestBackend(n_trees=5, min_leaf=1),
    locomp.CoxBackend("ridge", 0.1),
    locomp.CoxBackend("lasso", 0.02),
    locomp.ConstantBackend(0.1),
], ids=["forest", "cox_ridge", "cox_lasso", "constant"])
def test_exhaustive_enumeration_matches_brute_force(backend):
    ds = tiny_ds()
    grid, _, _ = discretize(ds, 4)
    patches = all_patches(8, 3, 4, 2)
    assert len(patches) == 210
    rep = locomp.run(ds, grid, backend, patches)
    ref = brute_force_delta(ds, grid, backend, patches)
    np.testing.assert_allclose(rep.delta, ref, rtol=0, atol=1e-12)


def test_constant_backend_scores_exactly_zero():
    ds, _ = synth.generate(synth.SynthConfig(n_samples=60, n_features=5, seed=1))
    grid, _, _ = discretize(ds)
    rep = locomp.run(ds, grid, locomp.ConstantBackend(0.07), K=200, seed=3)
    assert np.all(rep.delta == 0.0)


def test_sampling_contract():
    with pytest.raises(ValueError):
        locomp.sample_minipatches(5, 3, 5, 1, 1)
    with pytest.raises(ValueError):
        locomp.sample_minipatches(5, 3, 2, 4, 1)
    with pytest.raises(ValueError):
        locomp.sample_minipatches(5, 3, 2, 1, 0)
    a = locomp.sample_minipatches(10, 4, 2, 2, 3, seed=9)
    b = locomp.sample_minipatches(10, 4, 2, 2, 3, seed=9)
    for p, r in zip(a, b):
        assert np.array_equal(p.rows, r.rows) and np.array_equal(p.cols, r.cols) and p.seed == r.seed
        assert p.rows.size == 2 and p.cols.size == 2 and len(set(p.rows)) == 2
    assert locomp.default_patch_shape(350, 56) == (70, 7)


def test_exclusion_coverage_at_paper_scale():
    N, M, n, m = 350, 56, 70, 7
    patches = locomp.sample_minipatches(N, M, n, m, 10000, seed=0)
    row_in = np.zeros((len(patches), N), dtype=bool)
    col_in = np.zeros((len(patches), M), dtype=bool)
    for k, p in enumerate(patches):
        row_in[k, p.rows] = True
        col_in[k, p.cols] = True
    excl = (~row_in).astype(np.int32).T @ (~col_in).astype(np.int32)
    assert excl.min() >= 1
    frac = excl.mean() / len(patches)
    assert frac == pytest.approx((1 - n / N) * (1 - m / M), rel=0.01)


def test_rank_examples():
    def report(delta):
        delta = np.asarray(delta, float)
        z = np.zeros((1, delta.size))
        return locomp.OcclusionReport(("f1", "f2", "f3")[: delta.size], delta,
                                      locomp._ordinal_ranks(delta), np.ones(delta.size, int), z,
                                      np.ones(1, int), z.astype(int), delta, delta)
    assert locomp.rank(report([0.3, 0.1, 0.2]), 2) == ["f1", "f3"]
    assert locomp.rank(report([0.5, 0.5, 0.5])) == ["f1", "f2", "f3"]
    assert list(report([np.nan, 0.1, 0.2]).rank) == [3, 2, 1]
    with pytest.raises(ValueError):
        locomp.rank(report([0.3, 0.1, 0.2]), 4)


def test_report_consistency_and_round_trip(tmp_path):
    ds, _ = synth.generate(synth.SynthConfig(n_samples=80, n_features=6, informative=(2,),
                                             coefficients=(1.5,), seed=2))
    grid, _, _ = discretize(ds)
    rep = locomp.run(ds, grid, K=300, seed=1)
    assert sorted(rep.rank) == list(range(1, 7))
    assert np.all(np.diff(rep.delta[rep.order()]) <= 0)
    assert locomp.rank(rep) == [ds.feature_names[j] for j in np.argsort(rep.rank)]
    used = np.isfinite(rep.delta_ij)
    assert np.all(rep.count_excl[used] >= 5) and np.all(rep.count_all[used.any(axis=1)] >= 5)
    assert np.all(rep.ci_low <= rep.delta) and np.all(rep.delta <= rep.ci_high)
    rep.to_json(tmp_path / "r.json")
    back = locomp.OcclusionReport.from_json(tmp_path / "r.json")
    np.testing.assert_array_equal(back.delta, rep.delta)
    np.testing.assert_array_equal(back.rank, rep.rank)
    assert back.meta == rep.meta and rep.meta["K"] == 300
    header, *rows = rep.csv_rows()
    assert header[:3] == ["rank", "feature", "delta"] and len(rows) == 6


def test_worker_count_does_not_change_output():
    ds, _ = synth.generate(synth.SynthConfig(n_samples=70, n_features=5, seed=4))
    grid, _, _ = discretize(ds)
    a = locomp.run(ds, grid, K=150, seed=2, workers=1)
    b = locomp.run(ds, grid, K=150, seed=2, workers=4, chunk_size=7)
    np.testing.assert_array_equal(a.delta_ij, b.delta_ij)


def test_saturation_aborts_before_fitting():
    class Exploding:
        def fit_predict(self, *a):
            raise AssertionError("fit called")

        def to_dict(self):
            return {}

    ds, _ = synth.generate(synth.SynthConfig(n_samples=40, n_features=4, target_censoring=0.97, seed=0))
    grid, _, _ = discretize(ds)
    with pytest.raises(CensoringSaturationError) as info:
        locomp.run(ds, grid, Exploding(), K=100, seed=0)
    assert info.value.n_patches == 100 and info.value.n_skipped > 50


def test_event_free_patches_are_skipped():
    ds = tiny_ds()
    grid, _, _ = discretize(ds, 4)
    patches = all_patches(8, 3, 4, 2)
    rep = locomp.run(ds, grid, locomp.ConstantBackend(), patches)
    free = [p.index for p in patches if ds.events[p.rows].sum() == 0]
    assert list(rep.skipped) == free and len(free) > 0


@pytest.mark.slow
def test_single_planted_feature_ranks_first():
    wins = 0
    for seed in range(100):
        cfg = synth.SynthConfig(n_samples=60, n_features=4, informative=(1,), coefficients=(1.5,),
                                blocks=((0,), (1,), (2,), (3,)), rho=0.0, target_censoring=0.3,
                                seed=seed)
        ds, _ = synth.generate(cfg)
        grid, _, _ = discretize(ds)
        rep = locomp.run(ds, grid, K=600, seed=seed)
        wins += int(rep.rank[1] == 1)
    assert wins >= 95


@pytest.mark.slow
def test_null_scores_center_on_zero():
    deltas = []
    for seed in range(50):
        cfg = synth.SynthConfig(n_samples=60, n_features=4, informative=(0,), coefficients=(0.0,),
                                blocks=((0,), (1,), (2,), (3,)), rho=0.0, target_censoring=0.3,
                                seed=seed)
        ds, _ = synth.generate(cfg)
        grid, _, _ = discretize(ds)
        deltas.append(locomp.run(ds, grid, K=200, seed=seed).delta)
    deltas = np.array(deltas)
    for j in range(4):
        mean, sd = deltas[:, j].mean(), deltas[:, j].std(ddof=1)
        assert abs(mean) < 3 * sd


@pytest.mark.slow
def test_stronger_effect_does_not_lower_rank():
    med = []
    for coef in (0.5, 1.0):
        ranks = []
        for seed in range(20):
            cfg = synth.SynthConfig(n_samples=80, n_features=6, informative=(0, 3),
                                    coefficients=(coef, 0.8), blocks=tuple((j,) for j in range(6)),
                                    rho=0.0, target_censoring=0.4, seed=seed)
            ds, _ = synth.generate(cfg)
            grid, _, _ = discretize(ds)
            ranks.append(locomp.run(ds, grid, K=300, seed=seed).rank[0])
        med.append(np.median(ranks))
    assert med[1] <= med[0]


@pytest.mark.slow
def test_correlated_duplicates_both_score_positive():
    hits = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        A = rng.normal(size=80)
        X = np.column_stack([A, A + 0.1 * rng.normal(size=80), rng.normal(size=(80, 3))])
        t = rng.exponential(np.exp(-1.2 * A))
        c = rng.exponential(2.0, 80)
        ds = SurvivalDataset(X, ["A", "B", "n1", "n2", "n3"], np.minimum(t, c), (t <= c).astype(int))
        grid, _, _ = discretize(ds)
        rep = locomp.run(ds, grid, K=200, seed=seed)
        hits += int(min(rep.delta[0], rep.delta[1]) > 0)
    assert hits >= 80
