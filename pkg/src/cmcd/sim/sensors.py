"""Synthetic FBG readings and overhead camera frames."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import CmState

N_FIBERS = 3
N_NODES = 3
N_CHANNELS = N_FIBERS * N_NODES

# Sensing nodes sit on joints 2, 5 and 8 of the default 10-joint chain.
NODE_ARC_FRACTIONS = (0.2, 0.5, 0.8)


@dataclass(frozen=True)
class SensorFrame:
    timestamp: float
    values: np.ndarray


class RasterError(ValueError):
    """Geometry does not fit in the camera field of view."""


def local_curvatures(state: CmState, arc_fractions=NODE_ARC_FRACTIONS) -> np.ndarray:
    """Backbone curvature (1/mm) at the given arc-length fractions.

    Joint ``j`` carries a discrete curvature ``theta_j / link_length`` at arc
    length ``j * link_length``; positions between joints interpolate linearly.
    """
    ell = state.link_length
    joint_arc = np.arange(state.params.n_joints) * ell
    s = np.asarray(arc_fractions) * state.params.length
    return np.interp(s, joint_arc, state.joint_angles / ell)


def make_calibration(rng: np.random.Generator, gain: float = 1000.0) -> np.ndarray:
    """9x3 gain matrix: fiber ``f`` node ``j`` reads node ``j`` curvature.

    Fibers sit 120 degrees apart around the wire, so the bending strain sign
    and magnitude follow ``cos(120 deg * f)``; per-grating gains vary +/-20%.
    """
    C = np.zeros((N_CHANNELS, N_NODES))
    angle_gain = np.cos(2 * np.pi * np.arange(N_FIBERS) / N_FIBERS)
    for f in range(N_FIBERS):
        for j in range(N_NODES):
            C[f * N_NODES + j, j] = gain * angle_gain[f] * rng.uniform(0.8, 1.2)
    return C


def synth_fbg(
    state: CmState,
    calibration: np.ndarray,
    noise_std: float = 0.0,
    rng: np.random.Generator | None = None,
    timestamp: float = 0.0,
) -> SensorFrame:
    calibration = np.asarray(calibration, dtype=float)
    if calibration.shape != (N_CHANNELS, N_NODES):
        raise ValueError(f"calibration must be {N_CHANNELS}x{N_NODES}")
    if np.linalg.matrix_rank(calibration) < N_NODES:
        raise ValueError("calibration must have full column rank")
    values = calibration @ local_curvatures(state)
    if noise_std > 0:
        if rng is None:
            raise ValueError("noise requires an rng")
        values = values + rng.normal(0.0, noise_std, N_CHANNELS)
    return SensorFrame(timestamp, values)


def _pixel_box(lo, hi, mm_per_px, width, height):
    c0 = max(int(np.floor(lo[0] / mm_per_px)) - 1, 0)
    c1 = min(int(np.ceil(hi[0] / mm_per_px)) + 1, width)
    # rows count down from the top edge (y = height * mm_per_px)
    r0 = max(int(np.floor(height - hi[1] / mm_per_px)) - 1, 0)
    r1 = min(int(np.ceil(height - lo[1] / mm_per_px)) + 1, height)
    return r0, r1, c0, c1


def _pixel_centers(box, mm_per_px, height):
    r0, r1, c0, c1 = box
    x = (np.arange(c0, c1) + 0.5) * mm_per_px
    y = (height - np.arange(r0, r1) - 0.5) * mm_per_px
    return x[None, :], y[:, None]


def rasterize(
    state: CmState,
    obstacles,
    width: int = 640,
    height: int = 480,
    mm_per_px: float = 0.1,
    tube_width_px: float = 5.0,
) -> np.ndarray:
    """Render the tube and the obstacles as a ``(height, width)`` bool image.

    A pixel is foreground when its center lies within half the tube width of
    the backbone polyline or inside an obstacle ellipse.  Pixel ``(r, c)`` has
    its center at ``x = (c + 0.5) * mm_per_px``, ``y = (height - r - 0.5) *
    mm_per_px``, so the image shows the scene with y pointing up.
    """
    radius = 0.5 * tube_width_px * mm_per_px
    extent = np.array([width * mm_per_px, height * mm_per_px])
    chain = state.backbone()
    if np.any(chain.min(axis=0) - radius < 0) or np.any(chain.max(axis=0) + radius > extent):
        raise RasterError("manipulator leaves the field of view")
    for ob in obstacles:
        c, ax = np.asarray(ob.center), np.asarray(ob.semi_axes)
        if np.any(c - ax < 0) or np.any(c + ax > extent):
            raise RasterError(f"obstacle at {tuple(c)} leaves the field of view")

    img = np.zeros((height, width), dtype=bool)
    for p, q in zip(chain[:-1], chain[1:]):
        box = _pixel_box(np.minimum(p, q) - radius, np.maximum(p, q) + radius,
                         mm_per_px, width, height)
        x, y = _pixel_centers(box, mm_per_px, height)
        d = q - p
        t = ((x - p[0]) * d[0] + (y - p[1]) * d[1]) / (d @ d)
        t = np.clip(t, 0.0, 1.0)
        dist2 = (x - p[0] - t * d[0]) ** 2 + (y - p[1] - t * d[1]) ** 2
        r0, r1, c0, c1 = box
        img[r0:r1, c0:c1] |= dist2 <= radius * radius
    for ob in obstacles:
        c, ax = np.asarray(ob.center), np.asarray(ob.semi_axes)
        box = _pixel_box(c - ax, c + ax, mm_per_px, width, height)
        x, y = _pixel_centers(box, mm_per_px, height)
        inside = ((x - c[0]) / ax[0]) ** 2 + ((y - c[1]) / ax[1]) ** 2 <= 1.0
        r0, r1, c0, c1 = box
        img[r0:r1, c0:c1] |= inside
    return img


def world_to_pixel(xy, mm_per_px: float = 0.1, height: int = 480) -> tuple[int, int]:
    """(row, col) of the pixel containing world point ``xy``."""
    x, y = xy
    return int(height - np.floor(y / mm_per_px) - 1), int(np.floor(x / mm_per_px))
