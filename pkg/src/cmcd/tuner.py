"""K-fold grid search over boosting hyperparameters."""
from __future__ import annotations

import csv
import itertools
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataset import FoldSplit, LabeledDataset, kfold_split
from .gbt import Hyperparams, train


@dataclass(frozen=True)
class Grid:
    learning_rates: tuple = (0.2, 0.6, 1.0)
    max_features_options: tuple = ("all", "log2")
    subsamples: tuple = (1.0, 0.2)
    n_estimators: tuple = (500,)
    max_depths: tuple = (3,)
    k: int = 4
    seed: int = 0
    min_samples_leaf: int = 1

    def __post_init__(self):
        for name in ("learning_rates", "max_features_options", "subsamples",
                     "n_estimators", "max_depths"):
            val = getattr(self, name)
            if isinstance(val, (int, float, str)):
                val = (val,)
            if not len(val):
                raise ValueError(f"grid field {name} is empty")
            object.__setattr__(self, name, tuple(val))
        self.configurations()  # Hyperparams validates every combination

    def configurations(self) -> list[Hyperparams]:
        """Grid order: learning rate, then max_features, then subsample
        (the column order of the published tuning table)."""
        return [
            Hyperparams(n_estimators=int(ne), learning_rate=float(lr), max_depth=int(md),
                        subsample=float(ss), max_features=mf, seed=self.seed,
                        min_samples_leaf=self.min_samples_leaf)
            for lr, mf, ss, ne, md in itertools.product(
                self.learning_rates, self.max_features_options, self.subsamples,
                self.n_estimators, self.max_depths)
        ]


@dataclass
class ConfigResult:
    """Cross-validation outcome of one configuration.

    The summary numbers can be set directly (e.g. for published results) or
    derived from per-fold records with :meth:`summarize`.
    """

    hp: Hyperparams
    mean_accuracy: float = float("nan")  # percent
    std_deviation: float = float("nan")  # percent, population std over folds
    train_time: float = float("nan")  # seconds per fold
    fold_accuracy: list = field(default_factory=list)
    fold_train_time: list = field(default_factory=list)
    fold_predictions: list = field(default_factory=list)  # held-out 0/1 per fold
    fold_digest: str = ""
    error: str | None = None

    def summarize(self) -> "ConfigResult":
        if self.fold_accuracy:
            self.mean_accuracy = float(np.mean(self.fold_accuracy))
            self.std_deviation = float(np.std(self.fold_accuracy))
            self.train_time = float(np.mean(self.fold_train_time))
        return self

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class CvReport:
    results: list
    k: int
    seed: int
    fold_digest: str = ""

    @property
    def chosen(self) -> Hyperparams:
        return select_best(self)

    @property
    def complete(self) -> bool:
        return all(r.ok for r in self.results)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# k={self.k}, seed={self.seed}, std=population, folds={self.fold_digest}\n")
            w = csv.writer(fh)
            w.writerow(["learning_rate", "max_features", "subsample", "n_estimators",
                        "max_depth", "mean_accuracy", "std_deviation", "train_time", "status"])
            for r in self.results:
                w.writerow([r.hp.learning_rate, r.hp.max_features, r.hp.subsample,
                            r.hp.n_estimators, r.hp.max_depth, repr(r.mean_accuracy),
                            repr(r.std_deviation), repr(r.train_time), r.error or "ok"])

    def table(self) -> str:
        """Aligned text layout with one column per configuration."""
        head = [
            ("Learning Rate", lambda r: f"{r.hp.learning_rate:g}"),
            ("Max Features", lambda r: r.hp.max_features),
            ("Sub-Sample", lambda r: f"{r.hp.subsample:.1f}"),
        ]
        if len({(r.hp.n_estimators, r.hp.max_depth) for r in self.results}) > 1:
            head += [("Estimators", lambda r: str(r.hp.n_estimators)),
                     ("Max Depth", lambda r: str(r.hp.max_depth))]
        body = [
            ("Mean Accuracy (%)", lambda r: f"{r.mean_accuracy:.1f}" if r.ok else "failed"),
            ("Std. Deviation (%)", lambda r: f"{r.std_deviation:.2f}" if r.ok else "-"),
            ("Training Time (s)", lambda r: f"{r.train_time:.1f}" if r.ok else "-"),
        ]
        try:
            best = self.chosen
        except ValueError:
            best = None
        rows = [[name] + [fmt(r) + ("*" if r.hp == best else "") for r in self.results]
                for name, fmt in head + body]
        widths = [max(len(row[c]) for row in rows) for c in range(len(rows[0]))]
        lines = [" | ".join(cell.rjust(w) for cell, w in zip(row, widths)) for row in rows]
        rule = "-+-".join("-" * w for w in widths)
        lines.insert(len(head), rule)
        title = f"K-fold (k={self.k}) cross validation, population std; * = selected"
        return "\n".join([title, rule, *lines, rule])


def _evaluate(args):
    X, y, hp, split = args
    res = ConfigResult(hp, fold_digest=split.digest())
    for f, (tr, te) in enumerate(split.folds()):
        if len(np.unique(y[tr])) < 2:
            res.error = f"fold {f}: training part holds a single class"
            return res
        t0 = time.perf_counter()
        model = train(X[tr], y[tr], hp)
        res.fold_train_time.append(time.perf_counter() - t0)
        pred = model.predict(X[te])
        res.fold_predictions.append(pred.astype(np.int8))
        res.fold_accuracy.append(100.0 * float(np.mean(pred == y[te])))
    return res.summarize()


def grid_search(data: LabeledDataset, grid: Grid, workers: int = 1,
                split: FoldSplit | None = None, progress=None) -> CvReport:
    """Every configuration sees the same seeded fold assignment.

    Configurations whose folds cannot be trained are reported with an
    ``error`` rather than dropped.  Results keep grid order.
    """
    X, y = data.X, data.y
    split = split or kfold_split(len(y), grid.k, grid.seed)
    jobs = [(X, y, hp, split) for hp in grid.configurations()]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_evaluate, jobs))
    else:
        results = []
        for job in jobs:
            results.append(_evaluate(job))
            if progress:
                progress(results[-1])
    return CvReport(results, split.k, split.seed, split.digest())


def select_best(report: CvReport) -> Hyperparams:
    """Highest mean accuracy, then lowest std, then lowest training time."""
    ok = [r for r in report.results if r.ok]
    if not ok:
        raise ValueError("report holds no completed configuration")
    return min(ok, key=lambda r: (-r.mean_accuracy, r.std_deviation, r.train_time)).hp


def recompute_accuracy(result: ConfigResult, y: np.ndarray, split: FoldSplit) -> list:
    """Fold accuracies rebuilt from the stored held-out predictions."""
    return [100.0 * float(np.mean(pred == y[te]))
            for pred, (_, te) in zip(result.fold_predictions, split.folds())]
