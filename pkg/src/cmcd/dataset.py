"""Aligning 100 Hz sensor rows with 30 Hz image labels; folds; CSV storage."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class LabeledDataset:
    timestamps: np.ndarray
    X: np.ndarray
    y: np.ndarray
    groups: np.ndarray  # scenario index of every row
    scenario_ids: tuple[str, ...] = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2:
            raise ValueError("X must be 2-D")
        y = np.asarray(self.y, dtype=int)
        if len(y) != len(X) or len(self.groups) != len(X):
            raise ValueError("timestamps, X, y and groups must have equal length")
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("labels must be 0 or 1")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "timestamps", np.asarray(self.timestamps, dtype=float))
        object.__setattr__(self, "groups", np.asarray(self.groups, dtype=int))
        ids = tuple(self.scenario_ids)
        groups = self.groups
        if not ids and len(groups):
            ids = tuple(f"group{i}" for i in range(int(groups.max()) + 1))
        if len(groups) and (groups.min() < 0 or groups.max() >= len(ids)):
            raise ValueError("group index outside scenario_ids")
        object.__setattr__(self, "scenario_ids", ids)

    def __len__(self) -> int:
        return len(self.y)

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def positives(self) -> int:
        return int(self.y.sum())

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx)
        return LabeledDataset(self.timestamps[idx], self.X[idx], self.y[idx],
                              self.groups[idx], self.scenario_ids, dict(self.meta))

    def group(self, scenario_id: str) -> "LabeledDataset":
        return self.subset(np.nonzero(self.groups == self.scenario_ids.index(scenario_id))[0])

    @classmethod
    def concat(cls, parts) -> "LabeledDataset":
        parts = list(parts)
        ids, groups = [], []
        for p in parts:
            offset = len(ids)
            ids.extend(p.scenario_ids)
            groups.append(p.groups + offset)
        n = {p.n_features for p in parts if len(p)}
        if len(n) > 1:
            raise ValueError(f"feature dimensions differ: {sorted(n)}")
        meta = {}
        for p in parts:
            meta.update(p.meta)
        return cls(
            np.concatenate([p.timestamps for p in parts]),
            np.concatenate([p.X for p in parts]),
            np.concatenate([p.y for p in parts]),
            np.concatenate(groups),
            tuple(ids),
            meta,
        )


def synchronize(sensor_t, sensor_values, label_t, labels, scenario_id: str = "scenario",
                exclude_transitions: bool = False, meta: dict | None = None) -> LabeledDataset:
    """Give every sensor row the label of the latest image at or before it.

    Rows older than the first image are dropped.  With
    ``exclude_transitions`` rows within one camera period of a label change
    are dropped too.
    """
    sensor_t = np.asarray(sensor_t, dtype=float)
    label_t = np.asarray(label_t, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if len(label_t) == 0:
        raise ValueError("label stream is empty")
    if np.any(np.diff(sensor_t) < 0) or np.any(np.diff(label_t) < 0):
        raise ValueError("streams must be sorted by timestamp")
    idx = np.searchsorted(label_t, sensor_t, side="right") - 1
    keep = idx >= 0
    if exclude_transitions and len(label_t) > 1:
        period = float(np.median(np.diff(label_t)))
        change_t = label_t[1:][np.diff(labels) != 0]
        if len(change_t):
            pos = np.searchsorted(change_t, sensor_t)
            before = np.abs(sensor_t - change_t[np.maximum(pos - 1, 0)])
            after = np.abs(change_t[np.minimum(pos, len(change_t) - 1)] - sensor_t)
            keep &= np.minimum(before, after) > period
    values = np.asarray(sensor_values, dtype=float)
    return LabeledDataset(
        sensor_t[keep], values[keep], labels[idx[keep]],
        np.zeros(int(keep.sum()), dtype=int), (scenario_id,), dict(meta or {}),
    )


@dataclass(frozen=True)
class FoldSplit:
    k: int
    fold_assignment: np.ndarray
    seed: int

    def folds(self):
        """``(train_idx, test_idx)`` for each fold id in order."""
        for f in range(self.k):
            yield (np.nonzero(self.fold_assignment != f)[0],
                   np.nonzero(self.fold_assignment == f)[0])

    def digest(self) -> str:
        return hashlib.sha256(self.fold_assignment.astype(np.int64).tobytes()).hexdigest()


def kfold_split(n_rows: int, k: int, seed: int = 0) -> FoldSplit:
    if k < 2:
        raise ValueError("k must be at least 2")
    if k > n_rows:
        raise ValueError(f"k={k} exceeds the number of rows ({n_rows})")
    perm = np.random.default_rng(seed).permutation(n_rows)
    assignment = np.empty(n_rows, dtype=int)
    for f, chunk in enumerate(np.array_split(perm, k)):
        assignment[chunk] = f
    return FoldSplit(k, assignment, seed)


# -- CSV --------------------------------------------------------------------

def _meta_line(ds: LabeledDataset) -> str:
    sizes = np.bincount(ds.groups, minlength=len(ds.scenario_ids)) if len(ds.scenario_ids) else []
    items = {
        "n": str(ds.n_features),
        "scenario": ";".join(ds.scenario_ids),
        "rows_per_scenario": ";".join(str(int(s)) for s in sizes),
        "rows": str(len(ds)),
        "positives": str(ds.positives),
    }
    for key, val in ds.meta.items():
        if key in items:
            continue
        val = str(val)
        if any(c in val for c in ",=\n") or any(c in key for c in ",=\n "):
            raise ValueError(f"meta entry {key!r} cannot be stored in the CSV header")
        items[key] = val
    return "# " + ", ".join(f"{k}={v}" for k, v in items.items())


def save_dataset(ds: LabeledDataset, path) -> None:
    n = ds.n_features
    order = np.argsort(ds.groups, kind="stable")
    with open(path, "w") as fh:
        fh.write(_meta_line(ds) + "\n")
        fh.write(",".join(["timestamp"] + [f"v{i + 1}" for i in range(n)] + ["label"]) + "\n")
        for i in order:
            vals = ",".join(f"{v:.17g}" for v in ds.X[i])
            fh.write(f"{ds.timestamps[i]:.17g},{vals},{int(ds.y[i])}\n")


class DatasetFormatError(ValueError):
    pass


def load_dataset(path) -> LabeledDataset:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# "):
        raise DatasetFormatError(f"{path}: line 1: missing '# n=...' header")
    meta = {}
    for item in lines[0][2:].split(", "):
        key, _, val = item.partition("=")
        meta[key] = val
    try:
        n = int(meta["n"])
    except (KeyError, ValueError):
        raise DatasetFormatError(f"{path}: line 1: header lacks n=<features>") from None
    expected = ["timestamp"] + [f"v{i + 1}" for i in range(n)] + ["label"]
    if len(lines) < 2 or lines[1].split(",") != expected:
        raise DatasetFormatError(f"{path}: line 2: expected columns {','.join(expected)}")
    rows = []
    for lineno, line in enumerate(lines[2:], start=3):
        parts = line.split(",")
        if len(parts) != n + 2:
            raise DatasetFormatError(
                f"{path}: line {lineno}: expected {n + 2} fields, found {len(parts)}")
        try:
            vals = [float(p) for p in parts[:-1]]
            lab = int(parts[-1])
        except ValueError:
            raise DatasetFormatError(f"{path}: line {lineno}: unparsable value") from None
        if lab not in (0, 1):
            raise DatasetFormatError(f"{path}: line {lineno}: label must be 0 or 1")
        rows.append(vals + [lab])
    arr = np.array(rows, dtype=float).reshape(-1, n + 2)
    ids = tuple(s for s in meta.pop("scenario", "").split(";") if s)
    sizes = [int(s) for s in meta.pop("rows_per_scenario", "").split(";") if s]
    if sum(sizes) != len(arr) or len(sizes) != len(ids):
        raise DatasetFormatError(f"{path}: line 1: rows_per_scenario does not match the rows")
    y = arr[:, -1].astype(int)
    if "positives" in meta and int(meta.pop("positives")) != int(y.sum()):
        raise DatasetFormatError(f"{path}: line 1: positives count disagrees with rows")
    meta.pop("rows", None)
    meta.pop("n")
    groups = np.repeat(np.arange(len(ids)), sizes)
    return LabeledDataset(arr[:, 0], arr[:, 1:-1], y, groups, ids, meta)
