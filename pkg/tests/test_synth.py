import numpy as np
import pytest
from scipy import stats

from survloco import cox, synth
from survloco.evaluation import c_index


def test_deterministic_per_seed():
    cfg = synth.SynthConfig(n_samples=50, n_features=6, seed=5)
    a, ta = synth.generate(cfg)
    b, tb = synth.generate(cfg)
    assert a.equals(b) and ta == tb
    c, _ = synth.generate(synth.SynthConfig(n_samples=50, n_features=6, seed=6))
    assert not a.equals(c)


def test_null_coefficients_give_uninformative_features():
    cs = []
    for seed in range(40):
        ds, _ = synth.generate(synth.SynthConfig(n_samples=150, n_features=3, informative=(0,),
                                                 coefficients=(0.0,), seed=seed))
        cs.append(c_index(ds.features[:, 0], ds.times, ds.events))
    assert abs(np.mean(cs) - 0.5) < 0.02


def test_large_coefficient_shortens_event_times():
    ds, _ = synth.generate(synth.SynthConfig(n_samples=300, n_features=4, informative=(2,),
                                             coefficients=(3.0,), target_censoring=0.3,
                                             dropout_rate=0.05, seed=1))
    ev = ds.events == 1
    rho, _ = stats.spearmanr(ds.features[ev, 2], ds.times[ev])
    assert rho < -0.6


def test_censoring_hits_target_on_average():
    cens = [synth.generate(synth.SynthConfig(n_samples=350, n_features=8, informative=(0, 5),
                                             coefficients=(0.8, 0.5), seed=s))[1].realized_censoring
            for s in range(50)]
    assert abs(np.mean(cens) - 0.77) < 0.03


def test_expected_censoring_matches_monte_carlo():
    rng = np.random.default_rng(0)
    lp = rng.normal(0, 1.3, 400000)
    T = rng.exponential(1 / np.exp(lp))
    D = rng.exponential(1 / 0.25, lp.size)
    mc = np.mean(np.minimum(D, 0.4) < T)
    assert synth.expected_censoring(0.4, 1.3, 1.0, 0.25) == pytest.approx(mc, abs=3e-3)


def test_block_covariance():
    cfg = synth.SynthConfig(n_features=6, blocks=((0, 1, 2), (3, 4)), rho=(0.5, 0.2),
                            feature_sd=(1, 1, 1, 2, 2, 1))
    S = synth.covariance(cfg)
    assert S[0, 1] == 0.5 and S[3, 4] == 0.2 * 4 and S[0, 3] == 0 and S[5, 5] == 1 and S[3, 3] == 4
    ds, _ = synth.generate(synth.SynthConfig(n_samples=20000, n_features=4, rho=0.7, seed=0))
    assert np.corrcoef(ds.features.T)[0, 1] == pytest.approx(0.7, abs=0.02)


def test_config_validation():
    with pytest.raises(ValueError):
        synth.SynthConfig(informative=(0, 1), coefficients=(1.0,))
    with pytest.raises(ValueError):
        synth.SynthConfig(rho=1.0)
    with pytest.raises(ValueError):
        synth.SynthConfig(target_censoring=0.0)
    with pytest.raises(ValueError):
        synth.SynthConfig(n_features=4, blocks=((0, 1), (1, 2)))
    with pytest.raises(ValueError):
        synth.generate(synth.SynthConfig(n_samples=20, n_features=2, target_censoring=0.05))
    cfg = synth.SynthConfig(n_features=5, blocks=((0, 1), (2, 3, 4)), rho=(0.3, 0.6), seed=2)
    assert synth.SynthConfig.from_dict(cfg.to_dict()) == cfg


def test_ground_truth_round_trip(tmp_path):
    _, truth = synth.generate(synth.SynthConfig(n_samples=30, n_features=4, seed=1))
    truth.to_json(tmp_path / "gt.json")
    assert synth.GroundTruth.from_json(tmp_path / "gt.json") == truth


def test_paper_shaped_layout():
    ds, truth = synth.paper_shaped(0)
    assert (ds.n_samples, ds.n_features) == (350, 65)
    assert len(ds.names_tagged("conventional")) == 9 and len(ds.names_tagged("dbm")) == 56
    assert ds.feature_names[0] == "bt25fw"
    planted = [n for n in truth.informative if n.startswith("dbm")]
    assert len(planted) == 6 and list(truth.coefficients[3:]) == sorted(truth.coefficients[3:], reverse=True)
    assert abs(truth.realized_censoring - 0.77) < 0.06
    assert np.all(ds.times <= 96.0 + 1e-9)


def test_dominant_conventional_feature_beats_the_rest():
    wins = 0
    for seed in range(10):
        ds, _ = synth.paper_shaped(seed)
        conv = ds.names_tagged("conventional")
        alone = cox.fit(ds.select(["bt25fw"]), cox.Penalty("ridge", 0.01))
        rest = cox.fit(ds.select(conv[1:]), cox.Penalty("ridge", 0.01))
        ca = c_index(alone.predict_risk(ds.select(["bt25fw"]).features), ds.times, ds.events)
        cr = c_index(rest.predict_risk(ds.select(conv[1:]).features), ds.times, ds.events)
        wins += int(ca > cr)
    assert wins == 10


def test_cox_recovers_generating_coefficients():
    beta = (1.0, -0.7, 0.5)
    cfg = synth.SynthConfig(n_samples=5000, n_features=5, informative=(0, 2, 4), coefficients=beta,
                            blocks=tuple((j,) for j in range(5)), rho=0.0, target_censoring=0.4,
                            dropout_rate=0.05, seed=3)
    ds, _ = synth.generate(cfg)
    m = cox.fit(ds, cox.Penalty("ridge", 1e-8))
    est = m.beta[[0, 2, 4]]
    assert np.all(np.sign(est) == np.sign(beta))
    assert np.all(np.abs(est - beta) / np.abs(beta) < 0.15)
