import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from survloco import synth
from survloco.dataset import (DatasetError, Schema, SurvivalDataset, TimeGrid, discretize,
                              load_csv, variance_filter, write_csv)

SCHEMA = {"time": "t", "event": "e", "dbm": ["x1"]}


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_small_csv(tmp_path):
    ds = load_csv(write(tmp_path, "t,e,x1\n1,1,0.5\n2,0,0.1\n3,1,0.9\n"), SCHEMA)
    assert (ds.n_samples, ds.n_features) == (3, 1)
    np.testing.assert_array_equal(ds.times, [1, 2, 3])
    np.testing.assert_array_equal(ds.events, [1, 0, 1])
    np.testing.assert_array_equal(ds.features[:, 0], [0.5, 0.1, 0.9])


@pytest.mark.parametrize("body,row,column", [
    ("t,e,x1\n1,1,0.5\n2,2,0.1\n", 2, "e"),
    ("t,e,x1\n1,1,0.5\n0,0,0.1\n", 2, "t"),
    ("t,e,x1\n1,1,abc\n", 1, "x1"),
    ("t,e,x1\n1,1,\n", 1, "x1"),
    ("t,e,x1\n1,1,0.5\n2,0.5,0.1\n", 2, "e"),
])
def test_bad_cells_report_location(tmp_path, body, row, column):
    with pytest.raises(DatasetError) as info:
        load_csv(write(tmp_path, body), SCHEMA)
    assert info.value.row == row and info.value.column == column


def test_missing_and_duplicate_columns(tmp_path):
    with pytest.raises(DatasetError) as info:
        load_csv(write(tmp_path, "t,e,x2\n1,1,0.5\n"), SCHEMA)
    assert info.value.column == "x1"
    with pytest.raises(DatasetError):
        load_csv(write(tmp_path, "t,e,x1,x1\n1,1,0.5,0.2\n"), {"time": "t", "event": "e", "dbm": ["x1"]})
    with pytest.raises(DatasetError):
        load_csv(write(tmp_path, "t,e,x1\n1,1,0.5\n"), {"time": "t", "event": "e", "dbm": ["x1", "x1"]})
    with pytest.raises(DatasetError):
        load_csv(write(tmp_path, "t,e,x1\n1,1,0.5\n"), {"time": "t", "event": "e"})


def test_dataset_invariants():
    with pytest.raises(ValueError):
        SurvivalDataset(np.zeros((2, 1)), ["a"], [1.0, -1.0], [1, 0])
    with pytest.raises(ValueError):
        SurvivalDataset(np.zeros((2, 2)), ["a", "a"], [1.0, 2.0], [1, 0])
    with pytest.raises(ValueError):
        SurvivalDataset(np.zeros((2, 1)), ["a"], [1.0, 2.0], [1, 3])


def test_write_load_round_trip(tmp_path):
    ds, _ = synth.generate(synth.SynthConfig(n_samples=40, n_features=5, conventional=(0,), seed=3))
    p = tmp_path / "rt.csv"
    schema = write_csv(ds, p, header_lines=["note: metadata"])
    back = load_csv(p, schema)
    assert back.equals(ds)
    assert back.feature_names == ds.feature_names
    assert back.names_tagged("conventional") == ["x1"]
    assert Schema.from_dict(schema.to_dict()) == schema


def test_variance_filter_examples():
    X = np.column_stack([np.full(8, 3.0), np.tile([0.0, 1.0], 4), np.arange(8.0)])
    ds = SurvivalDataset(X, ["const", "binary", "ramp"], np.arange(1.0, 9.0), [1, 0] * 4,
                         {"const": "conventional", "binary": "dbm", "ramp": "dbm"})
    assert variance_filter(ds, 0.01).feature_names == ("binary", "ramp")
    assert variance_filter(ds, 0.01, protected={"const"}).feature_names == ("const", "binary", "ramp")
    assert variance_filter(ds, 100.0).feature_names == ()
    once = variance_filter(ds, 0.3)
    assert variance_filter(once, 0.3).feature_names == once.feature_names
    with pytest.raises(ValueError):
        variance_filter(ds, -1.0)
    with pytest.raises(KeyError):
        variance_filter(ds, 0.01, protected={"nope"})


def test_variance_filter_reduces_paper_shaped_dbm_block():
    ds, _ = synth.paper_shaped(0, include_low_variance=True)
    assert len(ds.names_tagged("dbm")) == 102
    out = variance_filter(ds, 0.01, protected=ds.names_tagged("conventional"))
    assert len(out.names_tagged("dbm")) == 56
    assert len(out.names_tagged("conventional")) == 9
    assert not any(n.startswith("dbm_lv") for n in out.feature_names)


def test_discretize_examples():
    grid, q, e = discretize(np.array([1.0, 2.0, 3.0, 4.0]), 4)
    np.testing.assert_array_equal(q, [0, 1, 2, 3])
    assert e is None and grid.d == 4 and grid.end > 4.0
    _, q, _ = discretize(np.array([5.0]), 2)
    np.testing.assert_array_equal(q, [1])
    with pytest.raises(ValueError):
        discretize(np.array([1.0, 2.0]), 1)


def test_discretize_matches_linear_scan():
    t = np.random.default_rng(0).exponential(10, 200)
    grid, q, _ = discretize(t, 8)
    b = grid.boundaries
    for ti, qi in zip(t, q):
        scan = next(s for s in range(8) if b[s] <= ti < b[s + 1] or s == 7)
        assert qi == scan


def test_time_grid_validation():
    with pytest.raises(ValueError):
        TimeGrid(np.array([0.0, 1.0, 3.0]))
    with pytest.raises(ValueError):
        TimeGrid(np.array([0.5, 1.0, 1.5]))
    g = TimeGrid.equal_width(4, 8.0)
    assert TimeGrid.from_dict(g.to_dict()).end == 8.0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(1e-3, 1e4), min_size=1, max_size=50), st.integers(2, 64))
def test_interval_contains_time(times, d):
    t = np.array(times)
    grid, q, _ = discretize(t, d)
    b = grid.boundaries
    assert np.all((b[q] <= t) & (t <= b[q + 1]))
    assert np.all((t < b[q + 1]) | (q == d - 1))
