import numpy as np
import pytest

from cmcd.dataset import LabeledDataset, kfold_split
from cmcd.gbt import Hyperparams
from cmcd.tuner import ConfigResult, CvReport, Grid, grid_search, recompute_accuracy, select_best

# Published tuning results: (learning rate, max features, subsample) ->
# (mean accuracy %, std %, training time s)
PUBLISHED = [
    ((0.2, "all", 1.0), (97.8, 0.05, 108.0)),
    ((0.2, "all", 0.2), (97.8, 0.07, 65.3)),
    ((0.2, "log2", 1.0), (97.7, 0.07, 47.5)),
    ((0.2, "log2", 0.2), (97.5, 0.03, 40.4)),
    ((0.6, "all", 1.0), (97.7, 1.48, 94.7)),
    ((0.6, "all", 0.2), (98.2, 0.14, 64.2)),
    ((0.6, "log2", 1.0), (98.6, 0.04, 46.1)),
    ((0.6, "log2", 0.2), (98.0, 0.20, 40.0)),
    ((1.0, "all", 1.0), (97.0, 2.06, 77.9)),
    ((1.0, "all", 0.2), (93.5, 6.95, 64.5)),
    ((1.0, "log2", 1.0), (82.1, 18.0, 41.9)),
    ((1.0, "log2", 0.2), (97.9, 0.23, 37.9)),
]


def published_report():
    results = [
        ConfigResult(Hyperparams(n_estimators=500, learning_rate=lr, max_depth=3, subsample=ss,
                                 max_features=mf), acc, std, t)
        for (lr, mf, ss), (acc, std, t) in PUBLISHED
    ]
    return CvReport(results, k=4, seed=0)


def toy(n=200, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 3))
    y = (X[:, 0] > 0).astype(int)
    X[:, 0] += np.where(y == 1, 1.0, -1.0)  # wide gap between the classes
    return LabeledDataset(np.arange(n) / 100, X, y, np.zeros(n, int), ("toy",))


def test_published_table_selects_bold_cell():
    best = select_best(published_report())
    assert (best.learning_rate, best.max_features, best.subsample) == (0.6, "log2", 1.0)


def test_tie_breaks():
    hp1 = Hyperparams(learning_rate=0.2)
    hp2 = Hyperparams(learning_rate=0.4)
    hp3 = Hyperparams(learning_rate=0.6)
    r = CvReport([ConfigResult(hp1, 98.0, 0.2, 1.0), ConfigResult(hp2, 98.0, 0.1, 5.0),
                  ConfigResult(hp3, 98.0, 0.1, 2.0)], 4, 0)
    assert select_best(r) == hp3
    assert select_best(CvReport([ConfigResult(hp1, 50.0, 0.0, 1.0)], 4, 0)) == hp1
    failed = ConfigResult(hp2, 99.9, 0.0, 0.1, error="fold 0: single class")
    assert select_best(CvReport([failed, ConfigResult(hp1, 90.0, 1.0, 1.0)], 4, 0)) == hp1
    with pytest.raises(ValueError):
        select_best(CvReport([failed], 4, 0))


def test_grid_order_and_shape():
    g = Grid()
    cfgs = g.configurations()
    assert len(cfgs) == 12
    assert [(c.learning_rate, c.max_features, c.subsample) for c in cfgs] == [p[0] for p in PUBLISHED]
    assert all(c.n_estimators == 500 and c.max_depth == 3 for c in cfgs)
    with pytest.raises(ValueError):
        Grid(learning_rates=())
    with pytest.raises(ValueError):
        Grid(learning_rates=(1.5,))


def test_table_layout():
    text = published_report().table()
    lines = text.splitlines()
    assert "k=4" in lines[0] and "population" in lines[0]
    assert any(line.strip().startswith("Mean Accuracy (%)") for line in lines)
    acc_line = next(line for line in lines if "Mean Accuracy" in line)
    assert "98.6*" in acc_line and acc_line.count("|") == 12
    one = CvReport([ConfigResult(Hyperparams(), 99.0, 0.5, 1.0)], 4, 0).table()
    assert next(line for line in one.splitlines() if "Mean" in line).count("|") == 1


def test_separable_single_config():
    data = toy()
    rep = grid_search(data, Grid(learning_rates=(0.5,), max_features_options=("all",),
                                 subsamples=(1.0,), n_estimators=(20,), max_depths=(1,), k=2))
    (r,) = rep.results
    assert r.mean_accuracy == 100.0 and r.std_deviation == 0.0
    assert rep.complete and len(r.fold_accuracy) == 2


def test_folds_shared_and_audit_trail(tmp_path):
    data = toy(seed=3)
    data = LabeledDataset(data.timestamps, data.X + np.random.default_rng(1).normal(size=data.X.shape),
                          data.y, data.groups)
    grid = Grid(learning_rates=(0.3, 1.0), max_features_options=("all", "log2"), subsamples=(1.0,),
                n_estimators=(15,), max_depths=(2,), k=4, seed=7)
    rep = grid_search(data, grid)
    split = kfold_split(len(data), 4, 7)
    assert {r.fold_digest for r in rep.results} == {split.digest()} == {rep.fold_digest}
    for r in rep.results:
        assert recompute_accuracy(r, data.y, split) == r.fold_accuracy
        assert r.std_deviation == pytest.approx(np.std(r.fold_accuracy))
        assert 0 <= r.mean_accuracy <= 100
    rep.to_csv(tmp_path / "cv.csv")
    lines = (tmp_path / "cv.csv").read_text().splitlines()
    assert lines[0].startswith("# k=4, seed=7, std=population")
    assert len(lines) == 2 + 4


def test_parallel_matches_serial():
    data = toy(seed=5)
    grid = Grid(learning_rates=(0.3, 0.9), max_features_options=("all",), subsamples=(1.0, 0.5),
                n_estimators=(10,), max_depths=(2,), k=3)
    a = grid_search(data, grid)
    b = grid_search(data, grid, workers=2)
    assert [r.fold_accuracy for r in a.results] == [r.fold_accuracy for r in b.results]
    assert [r.hp for r in a.results] == [r.hp for r in b.results]


def test_single_class_fold_flagged():
    n = 40
    y = np.zeros(n, int)
    y[0] = 1
    data = LabeledDataset(np.arange(n) / 100, np.arange(n, dtype=float)[:, None], y,
                          np.zeros(n, int))
    rep = grid_search(data, Grid(learning_rates=(0.5,), max_features_options=("all",),
                                 subsamples=(1.0,), n_estimators=(3,), max_depths=(1,), k=4))
    assert not rep.complete
    assert "single class" in rep.results[0].error
    assert "failed" in rep.table()
