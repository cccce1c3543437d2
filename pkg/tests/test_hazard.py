import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from survloco.hazard import (EPS_CLIP, HazardCurve, ObservedOutcome, interval_nll, mean_nll,
                             nll, survival)


def mp_nll(h, q, c, eps=EPS_CLIP):
    """Two-branch loss evaluated in 50-digit arithmetic."""
    mpmath.mp.dps = 50
    hc = [min(max(mpmath.mpf(float(v)), mpmath.mpf(eps)), 1 - mpmath.mpf(eps)) for v in h]
    S = lambda k: mpmath.fprod([1 - hc[s] for s in range(k)])
    if c == 1:
        return -mpmath.log(hc[q - 1]) - mpmath.log(S(q - 1))
    return -mpmath.log(S(q))


def random_pairs(n, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        d = int(rng.integers(2, 33))
        h = rng.uniform(0, 1, d)
        h[rng.random(d) < 0.1] = 0.0
        h[rng.random(d) < 0.05] = 1.0
        yield HazardCurve(h), ObservedOutcome(int(rng.integers(1, d + 1)), int(rng.integers(0, 2)))


def test_survival_examples():
    assert survival(HazardCurve([0.0, 0.0, 0.0, 0.0]), 3) == pytest.approx(1.0, abs=1e-5)
    assert survival(HazardCurve([0.5, 0.5]), 2) == 0.25
    assert survival(HazardCurve([0.3, 0.2]), 0) == 1.0


def test_survival_matches_product_loop():
    rng = np.random.default_rng(1)
    for _ in range(50):
        h = rng.uniform(0.01, 0.99, 10)
        expect = 1.0
        for v in h:
            expect *= 1.0 - v
        assert survival(HazardCurve(h), 10) == pytest.approx(expect, rel=1e-13)


def test_survival_range_checked():
    with pytest.raises(IndexError):
        survival(HazardCurve([0.1, 0.2]), 3)


def test_nll_examples():
    assert nll(HazardCurve([0.5, 0.5]), ObservedOutcome(1, 1)) == pytest.approx(math.log(2), abs=1e-12)
    assert nll(HazardCurve([0.5, 0.5]), ObservedOutcome(2, 0)) == pytest.approx(math.log(4), abs=1e-12)


def test_nll_matches_high_precision():
    err = max(abs(nll(c, o) - float(mp_nll(c.h, o.q, o.c))) for c, o in random_pairs(300))
    assert err < 1e-12


def test_event_convention_flip():
    c = HazardCurve([0.2, 0.4, 0.1])
    assert nll(c, ObservedOutcome(2, 0), event_value=0) == nll(c, ObservedOutcome(2, 1))
    assert nll(c, ObservedOutcome(2, 1), event_value=0) == nll(c, ObservedOutcome(2, 0))


def test_mean_nll():
    c, o = HazardCurve([0.3, 0.6]), ObservedOutcome(2, 1)
    assert mean_nll([c], [o]) == nll(c, o)
    assert mean_nll([c, c], [o, o]) == nll(c, o)
    pairs = list(random_pairs(100, seed=3))
    loop = sum(nll(c, o) for c, o in pairs) / len(pairs)
    assert abs(mean_nll(*zip(*pairs)) - loop) < 1e-12
    with pytest.raises(ValueError):
        mean_nll([], [])
    with pytest.raises(ValueError):
        mean_nll([c], [])


def test_interval_nll_matches_scalar():
    rng = np.random.default_rng(4)
    H = rng.uniform(0, 1, (40, 8))
    q = rng.integers(0, 8, 40)
    e = rng.integers(0, 2, 40)
    vec = interval_nll(H, q, e)
    ref = [nll(HazardCurve(H[i]), ObservedOutcome.from_interval(q[i], e[i])) for i in range(40)]
    np.testing.assert_allclose(vec, ref, rtol=0, atol=1e-12)


def test_invalid_inputs():
    with pytest.raises(ValueError):
        HazardCurve([0.5, 1.5])
    with pytest.raises(ValueError):
        HazardCurve([])
    with pytest.raises(ValueError):
        ObservedOutcome(0, 1)
    with pytest.raises(ValueError):
        ObservedOutcome(1, 2)
    with pytest.raises(IndexError):
        nll(HazardCurve([0.5]), ObservedOutcome(2, 0))


curves = st.lists(st.floats(0, 1), min_size=1, max_size=20).map(HazardCurve)


@settings(max_examples=200, deadline=None)
@given(curves, st.data())
def test_censored_branch_is_minus_log_survival(curve, data):
    q = data.draw(st.integers(1, curve.d))
    assert nll(curve, ObservedOutcome(q, 0)) == pytest.approx(-math.log(survival(curve, q)), rel=1e-12, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(curves, st.data())
def test_survival_recursion(curve, data):
    q = data.draw(st.integers(0, curve.d - 1))
    h = min(max(curve.h[q], EPS_CLIP), 1 - EPS_CLIP)
    assert survival(curve, q) * (1 - h) == pytest.approx(survival(curve, q + 1), rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(curves, st.data())
def test_event_loss_decreases_in_event_hazard(curve, data):
    q = data.draw(st.integers(1, curve.d))
    lo = data.draw(st.floats(0.01, 0.98))
    hi = data.draw(st.floats(lo + 0.01, 0.99))
    a, b = curve.h.copy(), curve.h.copy()
    a[q - 1], b[q - 1] = lo, hi
    obs = ObservedOutcome(q, 1)
    assert nll(HazardCurve(b), obs) < nll(HazardCurve(a), obs)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from([0.0, 1.0]), min_size=1, max_size=30), st.data())
def test_clipping_keeps_loss_finite(h, data):
    curve = HazardCurve(h)
    q = data.draw(st.integers(1, curve.d))
    c = data.draw(st.integers(0, 1))
    v = nll(curve, ObservedOutcome(q, c))
    assert math.isfinite(v)
    assert 0 <= v <= -math.log(EPS_CLIP) * (curve.d + 1)
