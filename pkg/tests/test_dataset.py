import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmcd.dataset import (
    DatasetFormatError,
    LabeledDataset,
    kfold_split,
    load_dataset,
    save_dataset,
    synchronize,
)

from oracles import zero_order_hold_naive


def test_zero_order_hold_examples():
    ds = synchronize([0.015], np.zeros((1, 9)), [0.0, 1 / 30], [1, 0])
    assert ds.y.tolist() == [1]
    ds = synchronize([1 / 30], np.zeros((1, 9)), [0.0, 1 / 30], [1, 0])
    assert ds.y.tolist() == [0]


def test_rows_before_first_image_dropped():
    ds = synchronize([0.0, 0.01, 0.02, 0.03], np.arange(36.0).reshape(4, 9), [0.015], [1])
    assert ds.timestamps.tolist() == [0.02, 0.03]
    assert ds.X[0, 0] == 18.0


def test_matches_brute_force_search():
    rng = np.random.default_rng(0)
    for _ in range(20):
        st_ = np.arange(100) / 100
        lt = np.sort(rng.uniform(0, 1, 30))
        labels = rng.integers(0, 2, 30)
        ds = synchronize(st_, rng.normal(size=(100, 9)), lt, labels)
        ref = zero_order_hold_naive(st_, lt, labels)
        kept = [r for r in ref if r is not None]
        assert ds.y.tolist() == kept
        assert ds.timestamps.tolist() == [t for t, r in zip(st_, ref) if r is not None]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 5), min_size=1, max_size=40),
       st.lists(st.tuples(st.floats(0, 5), st.integers(0, 1)), min_size=1, max_size=15))
def test_never_invents_labels(sensor, images):
    sensor = sorted(sensor)
    images = sorted(images)
    lt = [t for t, _ in images]
    labels = [lab for _, lab in images]
    ds = synchronize(sensor, np.zeros((len(sensor), 2)), lt, labels)
    assert set(ds.y.tolist()) <= set(labels)
    assert ds.y.tolist() == [r for r in zero_order_hold_naive(sensor, lt, labels) if r is not None]


def test_synchronize_errors():
    with pytest.raises(ValueError):
        synchronize([0.0], np.zeros((1, 9)), [], [])
    with pytest.raises(ValueError):
        synchronize([0.1, 0.0], np.zeros((2, 9)), [0.0], [1])


def test_exclude_transitions():
    st_ = np.arange(100) / 100
    lt = np.arange(30) / 30
    labels = (lt >= 0.5).astype(int)
    full = synchronize(st_, np.zeros((100, 9)), lt, labels)
    cut = synchronize(st_, np.zeros((100, 9)), lt, labels, exclude_transitions=True)
    assert len(full) == 100
    dropped = sorted(set(full.timestamps) - set(cut.timestamps))
    assert dropped and all(abs(t - 0.5) <= 1 / 30 + 1e-12 for t in dropped)


def test_kfold_examples():
    f = kfold_split(8, 4, 0)
    sizes = [len(te) for _, te in f.folds()]
    assert sizes == [2, 2, 2, 2]
    assert np.array_equal(kfold_split(8, 4, 0).fold_assignment, f.fold_assignment)
    assert [len(te) for _, te in kfold_split(57000, 4, 0).folds()] == [14250] * 4
    with pytest.raises(ValueError):
        kfold_split(3, 4)
    with pytest.raises(ValueError):
        kfold_split(10, 1)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 300), st.integers(2, 10), st.integers(0, 1000))
def test_folds_partition(n, k, seed):
    if k > n:
        return
    f = kfold_split(n, k, seed)
    tests = [set(te.tolist()) for _, te in f.folds()]
    assert set().union(*tests) == set(range(n))
    assert sum(len(t) for t in tests) == n
    sizes = [len(t) for t in tests]
    assert max(sizes) - min(sizes) <= 1
    for tr, te in f.folds():
        assert not set(tr.tolist()) & set(te.tolist())
        assert len(tr) + len(te) == n


def make_ds(rng, n_rows=1000, n=9):
    return LabeledDataset(np.arange(n_rows) * 0.01, rng.normal(size=(n_rows, n)) * 1e3,
                          rng.integers(0, 2, n_rows), np.zeros(n_rows, int), ("s0",),
                          {"noise": "0.5"})


def test_csv_round_trip_bit_exact(tmp_path, rng):
    ds = make_ds(rng)
    save_dataset(ds, tmp_path / "d.csv")
    back = load_dataset(tmp_path / "d.csv")
    assert back.X.tobytes() == ds.X.tobytes()
    assert back.timestamps.tobytes() == ds.timestamps.tobytes()
    assert np.array_equal(back.y, ds.y)
    assert back.meta == {"noise": "0.5"} and back.scenario_ids == ("s0",)
    header = (tmp_path / "d.csv").read_text().splitlines()[0]
    assert header.startswith("# n=9, scenario=s0")
    assert f"positives={ds.positives}" in header


def test_multi_scenario_round_trip(tmp_path, rng):
    a, b = make_ds(rng, 30), make_ds(rng, 20)
    b = LabeledDataset(b.timestamps, b.X, b.y, b.groups, ("s1",), {})
    ds = LabeledDataset.concat([a, b])
    assert ds.scenario_ids == ("s0", "s1") and ds.group("s1").X.tobytes() == b.X.tobytes()
    save_dataset(ds, tmp_path / "d.csv")
    back = load_dataset(tmp_path / "d.csv")
    assert np.array_equal(back.groups, ds.groups)


def test_empty_dataset_round_trip(tmp_path):
    ds = LabeledDataset(np.zeros(0), np.zeros((0, 9)), np.zeros(0, int), np.zeros(0, int))
    save_dataset(ds, tmp_path / "e.csv")
    assert len((tmp_path / "e.csv").read_text().splitlines()) == 2
    back = load_dataset(tmp_path / "e.csv")
    assert len(back) == 0 and back.n_features == 9


def test_short_row_names_line(tmp_path, rng):
    save_dataset(make_ds(rng, 5), tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    lines[4] = ",".join(lines[4].split(",")[:-2] + ["1"])  # drop one feature column
    (tmp_path / "bad.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetFormatError, match="line 5"):
        load_dataset(tmp_path / "bad.csv")


def test_tampered_counts_rejected(tmp_path, rng):
    ds = make_ds(rng, 10)
    save_dataset(ds, tmp_path / "d.csv")
    text = (tmp_path / "d.csv").read_text()
    (tmp_path / "p.csv").write_text(text.replace(f"positives={ds.positives}", "positives=999"))
    with pytest.raises(DatasetFormatError):
        load_dataset(tmp_path / "p.csv")
    (tmp_path / "h.csv").write_text("timestamp,v1\n")
    with pytest.raises(DatasetFormatError, match="line 1"):
        load_dataset(tmp_path / "h.csv")


def test_dataset_validation():
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros(2), np.zeros((2, 9)), np.array([0, 2]), np.zeros(2, int))
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros(2), np.zeros(18), np.array([0, 1]), np.zeros(2, int))
