"""Independent reference implementations used only by the tests.

Each one follows the definition directly and as plainly as possible, with no
shared code from the package under test.
"""
from __future__ import annotations

import math
from collections import deque

import numpy as np


# -- connected components -----------------------------------------------------

def flood_fill_labels(img: np.ndarray, connectivity: int = 8) -> tuple[np.ndarray, int]:
    """Breadth-first flood fill from every unvisited foreground pixel."""
    img = np.asarray(img, dtype=bool)
    h, w = img.shape
    if connectivity == 8:
        steps = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)]
    else:
        steps = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    labels = np.zeros((h, w), dtype=int)
    count = 0
    for y in range(h):
        for x in range(w):
            if not img[y, x] or labels[y, x]:
                continue
            count += 1
            labels[y, x] = count
            todo = deque([(y, x)])
            while todo:
                cy, cx = todo.popleft()
                for dy, dx in steps:
                    ny, nx = cy + dy, cx + dx
                    if 0 <= ny < h and 0 <= nx < w and img[ny, nx] and not labels[ny, nx]:
                        labels[ny, nx] = count
                        todo.append((ny, nx))
    return labels, count


def same_partition(a: np.ndarray, b: np.ndarray) -> bool:
    """Whether two label images induce the same partition of the pixels."""
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    if not np.array_equal(a == 0, b == 0):
        return False
    fwd, back = {}, {}
    for u, v in zip(a[a > 0].tolist(), b[b > 0].tolist()):
        if fwd.setdefault(u, v) != v or back.setdefault(v, u) != u:
            return False
    return True


# -- morphology ---------------------------------------------------------------

def erode_naive(img: np.ndarray, k: int) -> np.ndarray:
    """Foreground iff the whole k x k window is foreground; outside counts as background."""
    h, w = img.shape
    r = k // 2
    out = np.zeros_like(img, dtype=bool)
    for y in range(h):
        for x in range(w):
            ok = True
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    ny, nx = y + dy, x + dx
                    if not (0 <= ny < h and 0 <= nx < w and img[ny, nx]):
                        ok = False
            out[y, x] = ok
    return out


def dilate_naive(img: np.ndarray, k: int) -> np.ndarray:
    h, w = img.shape
    r = k // 2
    out = np.zeros_like(img, dtype=bool)
    for y in range(h):
        for x in range(w):
            out[y, x] = any(
                0 <= y + dy < h and 0 <= x + dx < w and img[y + dy, x + dx]
                for dy in range(-r, r + 1) for dx in range(-r, r + 1)
            )
    return out


# -- synchronization ------------------------------------------------------------

def zero_order_hold_naive(sensor_t, label_t, labels):
    """For each sensor time, scan every image time for the latest one not after it."""
    out = []
    for t in sensor_t:
        best = None
        for j, lt in enumerate(label_t):
            if lt <= t and (best is None or lt >= label_t[best]):
                best = j
        out.append(None if best is None else int(labels[best]))
    return out


# -- gradient boosting ------------------------------------------------------------

_EPS = 1e-12


def _naive_split(X, r, rows, min_leaf):
    """O(N^2) search: every midpoint of every feature, sums recomputed per candidate."""
    best = None  # (gain, feature, threshold)
    n_all = len(rows)
    total = sum(r[i] for i in rows)
    for f in range(X.shape[1]):
        vals = sorted(set(X[i, f] for i in rows))
        for a, b in zip(vals[:-1], vals[1:]):
            thr = 0.5 * (a + b)
            left = [i for i in rows if X[i, f] <= thr]
            right = [i for i in rows if X[i, f] > thr]
            if len(left) < min_leaf or len(right) < min_leaf:
                continue
            sl = sum(r[i] for i in left)
            sr = sum(r[i] for i in right)
            gain = sl * sl / len(left) + sr * sr / len(right) - total * total / n_all
            if best is None or gain > best[0] + _EPS * max(abs(best[0]), 1.0):
                best = (gain, f, thr)
    if best is None or best[0] <= _EPS * max(abs(best[0]), 1.0):
        return None
    return best


def _naive_tree(X, r, rows, depth, max_depth, min_leaf):
    split = None
    if depth < max_depth and len(rows) >= 2 * min_leaf:
        split = _naive_split(X, r, rows, min_leaf)
    if split is None:
        num = sum(r[i] for i in rows)
        den = sum(abs(r[i]) * (2 - abs(r[i])) for i in rows)
        return ("leaf", 0.0 if den < 1e-150 else num / den)
    _, f, thr = split
    left = [i for i in rows if X[i, f] <= thr]
    right = [i for i in rows if X[i, f] > thr]
    return ("split", f, thr,
            _naive_tree(X, r, left, depth + 1, max_depth, min_leaf),
            _naive_tree(X, r, right, depth + 1, max_depth, min_leaf))


def _naive_eval(node, x):
    while node[0] == "split":
        node = node[3] if x[node[1]] <= node[2] else node[4]
    return node[1]


def reference_boosting(X, y, n_estimators, learning_rate, max_depth, min_leaf=1):
    """Friedman's two-class L2 TreeBoost written out with Python loops.

    Returns the training margins after the last tree.
    """
    X = np.asarray(X, dtype=float)
    yt = [2 * int(v) - 1 for v in y]
    n = len(yt)
    ybar = sum(yt) / n
    F0 = 0.5 * math.log((1 + ybar) / (1 - ybar))
    F = [F0] * n
    for _ in range(n_estimators):
        r = [2 * yt[i] / (1 + math.exp(2 * yt[i] * F[i])) for i in range(n)]
        tree = _naive_tree(X, r, list(range(n)), 0, max_depth, min_leaf)
        F = [F[i] + learning_rate * _naive_eval(tree, X[i]) for i in range(n)]
    return np.array(F)


# -- equilibrium ----------------------------------------------------------------

def chain_energy(theta, actuation, obstacles, kappa, weight, offset, n_joints, length,
                 base_xy, base_heading, samples_per_link):
    """Energy of the joint chain evaluated from first principles.

    Sample points are placed along each straight link; penetration into an
    ellipse is measured with the first-order distance ``(rho - 1) rho / |grad rho|``
    where ``rho`` is the normalised radius.
    """
    ell = length / n_joints
    E = kappa * float(np.sum(theta**2)) + weight * (offset * float(np.sum(theta)) - actuation) ** 2
    x, y = base_xy
    heading = base_heading
    pts = [(x, y)]
    for j in range(n_joints):
        heading += theta[j]
        nx, ny = x + ell * math.cos(heading), y + ell * math.sin(heading)
        for s in range(1, samples_per_link + 1):
            f = s / samples_per_link
            pts.append((x + f * (nx - x), y + f * (ny - y)))
        x, y = nx, ny
    for (cx, cy), (a, b), k, radius in obstacles:
        for px, py in pts:
            u, v = (px - cx) / a, (py - cy) / b
            rho = math.hypot(u, v)
            if rho == 0:
                continue
            g = math.hypot(u / (a * rho), v / (b * rho))
            depth = radius - (rho - 1) / g
            if depth > 0:
                E += k * depth * depth
    return E
