"""Image-based collision labels: threshold, opening, connected components.

Binary images are 2-D ``bool`` arrays indexed ``[row, col]``.
"""
from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np


@dataclass(frozen=True)
class LabelMap:
    labels: np.ndarray  # int32, 0 = background
    component_count: int

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


class NoisyFrameError(ValueError):
    """More components than the scene can contain; the frame is rejected."""

    def __init__(self, count: int, expected: int):
        super().__init__(f"{count} components found, at most {expected} expected")
        self.count = count
        self.expected = expected


def threshold(gray: np.ndarray, t: int) -> np.ndarray:
    return np.asarray(gray) >= t


def _check_kernel(k: int) -> None:
    if k < 1 or k % 2 == 0:
        raise ValueError(f"kernel size must be odd and >= 1, got {k}")


def _sweep(img: np.ndarray, k: int, reduce) -> np.ndarray:
    # square window = row window then column window; out-of-image is background
    h = k // 2
    out = np.asarray(img, dtype=bool)
    for axis in (0, 1):
        pad = [(0, 0), (0, 0)]
        pad[axis] = (h, h)
        padded = np.pad(out, pad, constant_values=False)
        n = out.shape[axis]
        acc = padded.take(range(0, n), axis=axis)
        for s in range(1, k):
            acc = reduce(acc, padded.take(range(s, s + n), axis=axis))
        out = acc
    return out


def erode(img: np.ndarray, k: int = 3) -> np.ndarray:
    _check_kernel(k)
    return _sweep(img, k, np.logical_and)


def dilate(img: np.ndarray, k: int = 3) -> np.ndarray:
    _check_kernel(k)
    return _sweep(img, k, np.logical_or)


def opening(img: np.ndarray, k: int = 3) -> np.ndarray:
    """Erosion followed by dilation with a ``k x k`` square."""
    return dilate(erode(img, k), k)


@numba.njit(cache=True)
def _find(parent, x):
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


@numba.njit(cache=True)
def _union(parent, a, b):
    ra = _find(parent, a)
    rb = _find(parent, b)
    if ra < rb:
        parent[rb] = ra
    elif rb < ra:
        parent[ra] = rb
    return min(ra, rb)


@numba.njit(cache=True)
def _two_pass(img, eight):
    H, W = img.shape
    labels = np.zeros((H, W), dtype=np.int32)
    parent = np.zeros(H * W // 2 + 2, dtype=np.int32)
    nxt = 1
    # first pass: provisional labels from already-visited neighbours
    for r in range(H):
        for c in range(W):
            if not img[r, c]:
                continue
            lab = 0
            for dr, dc in ((0, -1), (-1, -1), (-1, 0), (-1, 1)):
                if not eight and dr != 0 and dc != 0:
                    continue
                rr = r + dr
                cc = c + dc
                if rr < 0 or cc < 0 or cc >= W:
                    continue
                n = labels[rr, cc]
                if n == 0:
                    continue
                if lab == 0:
                    lab = _find(parent, n)
                else:
                    lab = _union(parent, lab, n)
            if lab == 0:
                if nxt >= parent.shape[0]:
                    grown = np.zeros(parent.shape[0] * 2, dtype=np.int32)
                    grown[: parent.shape[0]] = parent
                    parent = grown
                parent[nxt] = nxt
                lab = nxt
                nxt += 1
            labels[r, c] = lab
    # second pass: resolve equivalences, renumber in raster order
    final = np.zeros(nxt, dtype=np.int32)
    count = 0
    for r in range(H):
        for c in range(W):
            n = labels[r, c]
            if n == 0:
                continue
            root = _find(parent, n)
            if final[root] == 0:
                count += 1
                final[root] = count
            labels[r, c] = final[root]
    return labels, count


def label_components(img: np.ndarray, connectivity: int = 8) -> LabelMap:
    """Two-pass union-find labeling.

    Labels run ``1..C`` in the raster order of each component's first pixel.
    """
    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")
    img = np.ascontiguousarray(img, dtype=np.bool_)
    if img.ndim != 2:
        raise ValueError("expected a 2-D image")
    labels, count = _two_pass(img, connectivity == 8)
    return LabelMap(labels, int(count))


def collision_label(label_map: LabelMap, expected_separate: int) -> int:
    """1 when the tube has merged with an obstacle, else 0.

    ``expected_separate`` is one plus the number of obstacles in view.
    """
    n = label_map.component_count
    if n > expected_separate:
        raise NoisyFrameError(n, expected_separate)
    return int(n < expected_separate)


def seed_collision_label(label_map: LabelMap, base_px, obstacle_px) -> int:
    """Cross-check rule: collision iff the component holding the tube base
    pixel also holds some obstacle-center pixel."""
    base = label_map.labels[base_px]
    if base == 0:
        raise ValueError(f"base pixel {base_px} is background")
    return int(any(label_map.labels[p] == base for p in obstacle_px))


_COMMENT_T = re.compile(rb"#\s*t=(\S+)")


def write_pgm(path, gray: np.ndarray, timestamp: float | None = None) -> None:
    gray = np.asarray(gray, dtype=np.uint8)
    h, w = gray.shape
    header = b"P5\n"
    if timestamp is not None:
        header += f"# t={timestamp!r}\n".encode()
    header += f"{w} {h}\n255\n".encode()
    with open(path, "wb") as fh:
        fh.write(header + gray.tobytes())


def read_pgm(path) -> tuple[np.ndarray, float | None]:
    """Read a binary (P5) 8-bit PGM; returns the raster and the embedded
    timestamp comment, if any."""
    data = Path(path).read_bytes()
    if not data.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM")
    pos = 2
    tokens = []
    timestamp = None
    while len(tokens) < 3:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            end = data.index(b"\n", pos)
            m = _COMMENT_T.match(data[pos:end])
            if m:
                timestamp = float(m.group(1))
            pos = end + 1
            continue
        start = pos
        while not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(int(data[start:pos]))
    pos += 1  # single whitespace before the raster
    w, h, maxval = tokens
    if maxval > 255:
        raise ValueError(f"{path}: only 8-bit PGM supported")
    raster = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos)
    return raster.reshape(h, w).copy(), timestamp


def frame_time(path) -> float:
    """Timestamp of a ``frame_<t_ms>.pgm`` file (millisecond resolution)."""
    m = re.fullmatch(r"frame_(\d+)\.pgm", Path(path).name)
    if not m:
        raise ValueError(f"not a frame file: {path}")
    return int(m.group(1)) / 1000.0


def label_frame(gray, n_obstacles: int, t: int = 128, kernel: int = 3,
                connectivity: int = 8) -> tuple[int, int]:
    """Full per-frame pipeline; returns ``(component_count, label)``."""
    lm = label_components(opening(threshold(gray, t), kernel), connectivity)
    return lm.component_count, collision_label(lm, n_obstacles + 1)


def label_frames(frames_dir, n_obstacles: int, t: int = 128, kernel: int = 3,
                 connectivity: int = 8, on_noisy: str = "drop"):
    """Label every ``frame_*.pgm`` in a directory, in time order.

    Frames with too many components are dropped (``on_noisy="drop"``),
    re-opened with a kernel two pixels larger (``"reopen"``), or raise.
    Returns rows ``(timestamp, components, label)`` and the dropped count.
    """
    paths = sorted(Path(frames_dir).glob("frame_*.pgm"), key=frame_time)
    if not paths:
        raise FileNotFoundError(f"no frame_*.pgm files in {frames_dir}")
    rows, dropped = [], 0
    for p in paths:
        gray, ts = read_pgm(p)
        ts = frame_time(p) if ts is None else ts
        try:
            count, lab = label_frame(gray, n_obstacles, t, kernel, connectivity)
        except NoisyFrameError:
            if on_noisy == "raise":
                raise
            if on_noisy == "reopen":
                try:
                    count, lab = label_frame(gray, n_obstacles, t, kernel + 2, connectivity)
                except NoisyFrameError:
                    dropped += 1
                    continue
            else:
                dropped += 1
                continue
        rows.append((ts, count, lab))
    return rows, dropped


def write_label_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", "components", "label"])
        for ts, count, lab in rows:
            w.writerow([repr(float(ts)), int(count), int(lab)])


def read_label_csv(path) -> list[tuple[float, int, int]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["timestamp", "components", "label"]:
            raise ValueError(f"{path}: unexpected header {header}")
        return [(float(a), int(b), int(c)) for a, b, c in reader]
