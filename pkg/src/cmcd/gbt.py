"""Gradient-boosted regression trees for two-class logistic loss.

Labels ``y`` in ``{0, 1}`` are mapped to ``ỹ = 2y - 1``.  The model margin
``F(x)`` is half the log-odds, so ``p(y=1 | x) = 1 / (1 + exp(-2 F(x)))`` and
the per-sample loss is ``log(1 + exp(-2 ỹ F))``.  Each iteration fits a
squared-error tree to the negative gradient and replaces the leaf means with
one Newton step, then adds the tree scaled by the learning rate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

FORMAT_TAG = "cmcd-gbt 1"
_TIE_RTOL = 1e-12


@dataclass(frozen=True)
class Hyperparams:
    n_estimators: int = 100
    learning_rate: float = 0.1
    max_depth: int = 3
    subsample: float = 1.0
    max_features: str = "all"  # "all" or "log2"
    seed: int = 0
    min_samples_leaf: int = 1

    def __post_init__(self):
        if self.n_estimators < 1 or self.max_depth < 1 or self.min_samples_leaf < 1:
            raise ValueError("n_estimators, max_depth and min_samples_leaf must be >= 1")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in (0, 1]")
        if not 0 < self.subsample <= 1:
            raise ValueError("subsample must lie in (0, 1]")
        if self.max_features not in ("all", "log2"):
            raise ValueError("max_features must be 'all' or 'log2'")

    def n_split_features(self, n: int) -> int:
        if self.max_features == "log2":
            return max(1, min(n, math.ceil(math.log2(n)))) if n > 1 else 1
        return n


@dataclass(frozen=True)
class RegressionTree:
    """Binary tree stored in preorder; ``feature[i] == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def depth(self) -> int:
        def walk(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))
        return walk(0)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        node = np.zeros(len(X), dtype=np.intp)
        rows = np.arange(len(X))
        while True:
            f = self.feature[node]
            internal = f >= 0
            if not internal.any():
                return self.value[node]
            go_left = X[rows, np.where(internal, f, 0)] <= self.threshold[node]
            node = np.where(internal, np.where(go_left, self.left[node], self.right[node]), node)


def _scan(xs: np.ndarray, rs: np.ndarray, min_leaf: int):
    """Best threshold for one feature given values and residuals sorted by value.

    Returns ``(gain, threshold)`` or ``None``.  Gain is the squared-error
    reduction ``S_L^2/n_L + S_R^2/n_R - S^2/n``.
    """
    m = len(xs)
    if m < 2 * min_leaf:
        return None
    cs = np.cumsum(rs)
    total = cs[-1]
    n_left = np.arange(1, m)
    s_left = cs[:-1]
    gain = s_left**2 / n_left + (total - s_left) ** 2 / (m - n_left) - total**2 / m
    valid = xs[:-1] < xs[1:]
    if min_leaf > 1:
        valid &= (n_left >= min_leaf) & (m - n_left >= min_leaf)
    if not valid.any():
        return None
    gain = np.where(valid, gain, -np.inf)
    best = gain.max()
    tol = _TIE_RTOL * max(abs(best), 1.0)
    i = int(np.argmax(gain >= best - tol))
    thr = 0.5 * (xs[i] + xs[i + 1])
    if not thr < xs[i + 1]:
        thr = xs[i]
    return float(gain[i]), float(thr)


def best_split(X: np.ndarray, residuals: np.ndarray, feature_subset=None, min_samples_leaf: int = 1):
    """Exhaustive squared-error split search over midpoints of distinct values.

    Ties go to the lowest feature index, then the lowest threshold.  Returns
    ``(feature, threshold, gain)``, or ``None`` when no split reduces the error.
    """
    X = np.asarray(X, dtype=float)
    r = np.asarray(residuals, dtype=float)
    features = range(X.shape[1]) if feature_subset is None else sorted(feature_subset)
    orders = {f: np.argsort(X[:, f], kind="stable") for f in features}
    return _best_over(features, lambda f: (X[orders[f], f], r[orders[f]]), min_samples_leaf)


def _best_over(features, sorted_column, min_leaf):
    best = None
    for f in features:
        xs, rs = sorted_column(f)
        res = _scan(xs, rs, min_leaf)
        if res is None:
            continue
        gain, thr = res
        if best is None or gain > best[2] + _TIE_RTOL * max(abs(best[2]), 1.0):
            best = (f, thr, gain)
    if best is None or best[2] <= _TIE_RTOL * max(abs(best[2]), 1.0):
        return None
    return best


def _leaf_value(r: np.ndarray) -> float:
    num = r.sum()
    den = (np.abs(r) * (2.0 - np.abs(r))).sum()
    if den < 1e-150:
        return 0.0
    return float(num / den)


class _TreeBuilder:
    def __init__(self, X, presorted, hp: Hyperparams, rng, n_split):
        self.X = X
        self.presorted = presorted
        self.hp = hp
        self.rng = rng
        self.n_split = n_split
        self.n_features = X.shape[1]

    def build(self, inbag: np.ndarray, r: np.ndarray) -> RegressionTree:
        self.r = r
        self.nodes = []
        orders = [o[inbag[o]] for o in self.presorted]
        self._grow(orders, 0)
        cols = list(zip(*self.nodes))
        return RegressionTree(
            feature=np.array(cols[0], dtype=np.intp),
            threshold=np.array(cols[1], dtype=float),
            left=np.array(cols[2], dtype=np.intp),
            right=np.array(cols[3], dtype=np.intp),
            value=np.array(cols[4], dtype=float),
        )

    def _grow(self, orders, depth) -> int:
        idx = len(self.nodes)
        self.nodes.append(None)
        rows = orders[0]
        split = None
        if depth < self.hp.max_depth and len(rows) >= 2 * self.hp.min_samples_leaf:
            if self.n_split < self.n_features:
                feats = np.sort(self.rng.choice(self.n_features, self.n_split, replace=False))
            else:
                feats = range(self.n_features)
            split = _best_over(
                [int(f) for f in feats],
                lambda f: (self.X[orders[f], f], self.r[orders[f]]),
                self.hp.min_samples_leaf,
            )
        if split is None:
            self.nodes[idx] = (-1, 0.0, -1, -1, _leaf_value(self.r[rows]))
            return idx
        f, thr, _ = split
        goes_left = np.zeros(len(self.X), dtype=bool)
        goes_left[rows[self.X[rows, f] <= thr]] = True
        left_orders = [o[goes_left[o]] for o in orders]
        right_orders = [o[~goes_left[o]] for o in orders]
        left = self._grow(left_orders, depth + 1)
        right = self._grow(right_orders, depth + 1)
        self.nodes[idx] = (f, thr, left, right, 0.0)
        return idx


def residuals(y_pm: np.ndarray, F: np.ndarray) -> np.ndarray:
    """Negative gradient ``2ỹ / (1 + exp(2ỹF))`` of the logistic loss."""
    return 2.0 * y_pm * expit(-2.0 * y_pm * F)


def deviance(y_pm: np.ndarray, F: np.ndarray) -> float:
    return float(np.mean(np.logaddexp(0.0, -2.0 * y_pm * F)))


def _check_xy(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be 2-D with one row per label")
    if len(X) == 0:
        raise ValueError("training data is empty")
    if not np.all(np.isfinite(X)):
        raise ValueError("features must be finite")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    return X, y.astype(int)


def train(X, y, hp: Hyperparams) -> "GbtModel":
    X, y = _check_xy(X, y)
    if y.min() == y.max():
        raise ValueError("training data holds a single class")
    y_pm = 2.0 * y - 1.0
    N, n = X.shape
    ybar = y_pm.mean()
    F0 = 0.5 * math.log((1 + ybar) / (1 - ybar))
    F = np.full(N, F0)
    rng = np.random.default_rng(hp.seed)
    presorted = [np.argsort(X[:, f], kind="stable") for f in range(n)]
    builder = _TreeBuilder(X, presorted, hp, rng, hp.n_split_features(n))
    n_bag = max(1, int(round(hp.subsample * N)))
    inbag = np.ones(N, dtype=bool)
    trees = []
    for _ in range(hp.n_estimators):
        r = residuals(y_pm, F)
        if hp.subsample < 1.0:
            inbag = np.zeros(N, dtype=bool)
            inbag[rng.choice(N, n_bag, replace=False)] = True
        tree = builder.build(inbag, r)
        trees.append(tree)
        F += hp.learning_rate * tree.predict(X)
    return GbtModel(F0, tuple(trees), hp.learning_rate, n)


class GbtModel:
    """Trained ensemble ``F(x) = F0 + lr * sum_m tree_m(x)``; immutable."""

    def __init__(self, initial_margin: float, trees, learning_rate: float, n_features: int):
        self.initial_margin = float(initial_margin)
        self.trees = tuple(trees)
        self.learning_rate = float(learning_rate)
        self.n_features = int(n_features)
        self._pack()

    def _pack(self):
        # all trees in one padded table so inference walks them together
        T = len(self.trees)
        width = max((t.n_nodes for t in self.trees), default=1)
        self._feat = np.full((T, width), -1, dtype=np.intp)
        self._thr = np.zeros((T, width))
        self._left = np.zeros((T, width), dtype=np.intp)
        self._right = np.zeros((T, width), dtype=np.intp)
        self._val = np.zeros((T, width))
        for i, t in enumerate(self.trees):
            k = t.n_nodes
            self._feat[i, :k] = t.feature
            self._thr[i, :k] = t.threshold
            self._left[i, :k] = t.left
            self._right[i, :k] = t.right
            self._val[i, :k] = t.value
        self._depth = max((t.depth() for t in self.trees), default=0)

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        return X

    def tree_outputs(self, X) -> np.ndarray:
        """Raw leaf value of every tree, shape ``(rows, trees)``."""
        X = self._check(X)
        T = len(self.trees)
        out = np.empty((len(X), T))
        tix = np.arange(T)[None, :]
        for lo in range(0, len(X), 2048):
            chunk = X[lo:lo + 2048]
            rows = np.arange(len(chunk))[:, None]
            node = np.zeros((len(chunk), T), dtype=np.intp)
            for _ in range(self._depth):
                f = self._feat[tix, node]
                go_left = chunk[rows, np.maximum(f, 0)] <= self._thr[tix, node]
                nxt = np.where(go_left, self._left[tix, node], self._right[tix, node])
                node = np.where(f >= 0, nxt, node)
            out[lo:lo + 2048] = self._val[tix, node]
        return out

    def staged_margins(self, X) -> np.ndarray:
        """Margins after 0..M trees, shape ``(M + 1, rows)``."""
        vals = self.tree_outputs(X)
        out = np.empty((len(self.trees) + 1, len(vals)))
        F = np.full(len(vals), self.initial_margin)
        out[0] = F
        for m in range(len(self.trees)):
            F = F + self.learning_rate * vals[:, m]
            out[m + 1] = F
        return out

    def predict_margin(self, X) -> np.ndarray:
        vals = self.tree_outputs(X)
        F = np.full(len(vals), self.initial_margin)
        for m in range(len(self.trees)):
            F += self.learning_rate * vals[:, m]
        return F

    def predict_proba(self, X) -> np.ndarray:
        return expit(2.0 * self.predict_margin(X))

    def predict(self, X, threshold: float = 0.5) -> np.ndarray:
        return (self.predict_proba(X) >= threshold).astype(int)

    # -- serialization --------------------------------------------------
    def dumps(self) -> str:
        lines = [
            FORMAT_TAG,
            f"n_features {self.n_features}",
            f"learning_rate {self.learning_rate!r}",
            f"initial_margin {self.initial_margin!r}",
            f"n_trees {len(self.trees)}",
        ]
        for i, t in enumerate(self.trees):
            lines.append(f"tree {i} {t.n_nodes}")
            for k in range(t.n_nodes):
                if t.feature[k] < 0:
                    lines.append(f"leaf {float(t.value[k])!r}")
                else:
                    lines.append(
                        f"split {int(t.feature[k])} {float(t.threshold[k])!r} "
                        f"{int(t.left[k])} {int(t.right[k])}"
                    )
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "GbtModel":
        lines = text.splitlines()
        if not lines or lines[0] != FORMAT_TAG:
            raise ValueError("not a cmcd-gbt model file")

        def field(i, name):
            key, val = lines[i].split(" ", 1)
            if key != name:
                raise ValueError(f"line {i + 1}: expected {name!r}")
            return val

        n = int(field(1, "n_features"))
        lr = float(field(2, "learning_rate"))
        F0 = float(field(3, "initial_margin"))
        n_trees = int(field(4, "n_trees"))
        pos = 5
        trees = []
        for _ in range(n_trees):
            _, _, n_nodes = lines[pos].split()
            pos += 1
            cols = ([], [], [], [], [])
            for line in lines[pos:pos + int(n_nodes)]:
                parts = line.split()
                if parts[0] == "leaf":
                    row = (-1, 0.0, -1, -1, float(parts[1]))
                elif parts[0] == "split":
                    row = (int(parts[1]), float(parts[2]), int(parts[3]), int(parts[4]), 0.0)
                else:
                    raise ValueError(f"line {pos + 1}: bad node record")
                for c, v in zip(cols, row):
                    c.append(v)
            pos += int(n_nodes)
            trees.append(RegressionTree(
                np.array(cols[0], dtype=np.intp), np.array(cols[1], dtype=float),
                np.array(cols[2], dtype=np.intp), np.array(cols[3], dtype=np.intp),
                np.array(cols[4], dtype=float),
            ))
        return cls(F0, trees, lr, n)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "GbtModel":
        return cls.loads(Path(path).read_text())


@dataclass(frozen=True)
class StagedEval:
    deviance: np.ndarray  # length M + 1
    accuracy: np.ndarray


def staged_eval(model: GbtModel, X, y, threshold: float = 0.5) -> StagedEval:
    """Deviance and accuracy after each boosting iteration, 0 trees included."""
    X, y = _check_xy(X, y)
    y_pm = 2.0 * y - 1.0
    margins = model.staged_margins(X)
    dev = np.mean(np.logaddexp(0.0, -2.0 * y_pm[None, :] * margins), axis=1)
    acc = np.mean((expit(2.0 * margins) >= threshold) == (y[None, :] == 1), axis=1)
    return StagedEval(dev, acc)


def write_training_log(path, train_eval: StagedEval, test_eval: StagedEval | None = None) -> None:
    with open(path, "w") as fh:
        fh.write("iteration,train_deviance,test_deviance\n")
        for m, d in enumerate(train_eval.deviance):
            t = "" if test_eval is None else repr(float(test_eval.deviance[m]))
            fh.write(f"{m},{float(d)!r},{t}\n")
