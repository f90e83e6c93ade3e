import numpy as np

from cmcd.detector import DetectionLog
from cmcd.gbt import Hyperparams
from cmcd.report import read_cv_csv, read_training_log, render
from cmcd.tuner import ConfigResult, CvReport


def detection_log(n=200):
    t = np.arange(n) / 100
    truth = (t > 0.5) & (t < 1.2)
    p = np.where(truth, 0.9, 0.1)
    return DetectionLog(t, p, (p >= 0.5).astype(int), truth, np.zeros(n), 0, 0, 0.0)


def test_single_config_report_has_single_row(tmp_path):
    rep = CvReport([ConfigResult(Hyperparams(learning_rate=0.6, max_features="log2"), 98.0, 0.3, 2.0,
                                 fold_accuracy=[98.0, 97.7, 98.3, 98.0])], 4, 0)
    render(tmp_path, cv=rep)
    table = (tmp_path / "cv_table.txt").read_text()
    assert next(line for line in table.splitlines() if "Mean" in line).count("|") == 1
    back = read_cv_csv(tmp_path / "cv_report.csv")
    assert len(back.results) == 1 and back.k == 4
    assert back.results[0].hp.learning_rate == 0.6 and back.results[0].mean_accuracy == 98.0


def test_training_logs_and_plots(tmp_path):
    (tmp_path / "log.csv").write_text("iteration,train_deviance,test_deviance\n0,0.69,0.70\n1,0.5,\n")
    it, train, test = read_training_log(tmp_path / "log.csv")
    assert it.tolist() == [0, 1] and train[1] == 0.5 and np.isnan(test[1])
    written = render(tmp_path / "r", training_logs={"a": (it, train, test)},
                     detections={"trial": detection_log()})
    names = {p.name for p in written}
    assert names == {"loss_curves.png", "detection_trial.png", "detection_summary.csv"}
    for p in written:
        assert p.stat().st_size > 0
    rows = (tmp_path / "r" / "detection_summary.csv").read_text().splitlines()
    assert rows[1] == "trial,1,1,0.000000"
