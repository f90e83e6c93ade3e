"""Static report outputs: tuning tables, loss curves, detection timelines."""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .detector import DetectionLog  # noqa: E402
from .gbt import Hyperparams  # noqa: E402
from .tuner import ConfigResult, CvReport  # noqa: E402


def read_cv_csv(path) -> CvReport:
    with open(path, newline="") as fh:
        first = fh.readline()
        meta = dict(item.split("=", 1) for item in first[2:].strip().split(", "))
        rows = list(csv.DictReader(fh))
    results = []
    for r in rows:
        hp = Hyperparams(
            n_estimators=int(r["n_estimators"]), learning_rate=float(r["learning_rate"]),
            max_depth=int(r["max_depth"]), subsample=float(r["subsample"]),
            max_features=r["max_features"], seed=int(meta.get("seed", 0)),
        )
        results.append(ConfigResult(
            hp, float(r["mean_accuracy"]), float(r["std_deviation"]), float(r["train_time"]),
            error=None if r["status"] == "ok" else r["status"],
        ))
    return CvReport(results, int(meta["k"]), int(meta.get("seed", 0)), meta.get("folds", ""))


def read_training_log(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    it = np.array([int(r["iteration"]) for r in rows])
    train = np.array([float(r["train_deviance"]) for r in rows])
    test = np.array([float(r["test_deviance"]) if r["test_deviance"] else np.nan for r in rows])
    return it, train, test


def plot_loss_curves(logs: dict, path) -> None:
    """Test deviance against boosting iteration, one line per run."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, (it, train, test) in logs.items():
        y = test if np.isfinite(test).any() else train
        ax.plot(it, y, label=name, lw=1.2)
    ax.set_xlabel("boosting iteration")
    ax.set_ylabel("test deviance")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_detection(det: DetectionLog, path, title: str = "", threshold: float = 0.5) -> None:
    fig, ax = plt.subplots(figsize=(8, 2.8))
    if det.truth is not None:
        ax.fill_between(det.timestamps, 0, det.truth.astype(float), step="post",
                        color="tab:orange", alpha=0.3, label="contact (truth)")
    ax.plot(det.timestamps, det.probabilities, lw=0.9, label="collision probability")
    ax.axhline(threshold, color="k", lw=0.6, ls="--")
    ax.set_ylim(-0.05, 1.05)
    ax.set_xlabel("time (s)")
    ax.set_title(title, fontsize=9)
    ax.legend(fontsize=7, loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_episode_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "episodes", "detected", "false_positive_rate"])
        w.writerows(rows)


def render(out_dir, cv: CvReport | None = None, training_logs: dict | None = None,
           detections: dict | None = None) -> list[Path]:
    from .detector import score_episodes

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if cv is not None:
        (out / "cv_table.txt").write_text(cv.table() + "\n")
        cv.to_csv(out / "cv_report.csv")
        written += [out / "cv_table.txt", out / "cv_report.csv"]
    if training_logs:
        plot_loss_curves(training_logs, out / "loss_curves.png")
        written.append(out / "loss_curves.png")
    if detections:
        rows = []
        for name, det in detections.items():
            p = out / f"detection_{name}.png"
            plot_detection(det, p, name)
            written.append(p)
            if det.truth is not None:
                s = score_episodes(det.timestamps, det.labels, det.truth)
                rows.append([name, s.n_episodes, s.detected, f"{s.false_positive_rate:.6f}"])
        if rows:
            write_episode_csv(out / "detection_summary.csv", rows)
            written.append(out / "detection_summary.csv")
    return written
