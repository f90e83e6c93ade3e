"""Pseudo-rigid-body model of a planar, cable-driven continuum manipulator.

The backbone is a chain of ``n_joints`` equal rigid links joined by torsional
springs.  Joint ``i`` sits at the proximal end of link ``i`` and its angle is
the heading change relative to link ``i - 1`` (or the base heading for
``i = 0``).  A cable at a fixed offset from the backbone shortens by
``offset * sum(theta)``; the commanded cable displacement is imposed as a stiff
quadratic penalty.  Obstacles are axis-aligned ellipses that push back with a
quadratic penetration penalty.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class CmParams:
    n_joints: int = 10
    length: float = 35.0  # mm
    cable_offset: float = 2.5  # mm
    joint_stiffness: float = 1.0e4  # energy per rad^2 per joint
    cable_weight: float = 1.0e6  # energy per mm^2 of cable mismatch
    tube_radius: float = 0.25  # mm, half the rendered tube width
    samples_per_link: int = 8
    base_xy: tuple[float, float] = (32.0, 4.0)
    base_heading: float = np.pi / 2

    @property
    def link_length(self) -> float:
        return self.length / self.n_joints

    @property
    def max_actuation(self) -> float:
        """Cable travel that bends the whole tube by 1.6 rad."""
        return 1.6 * self.cable_offset


@dataclass(frozen=True)
class CmState:
    joint_angles: np.ndarray
    params: CmParams = field(default_factory=CmParams)

    def __post_init__(self):
        theta = np.asarray(self.joint_angles, dtype=float)
        if theta.shape != (self.params.n_joints,):
            raise ValueError(
                f"expected {self.params.n_joints} joint angles, got shape {theta.shape}"
            )
        if not np.all(np.isfinite(theta)):
            raise ValueError("joint angles must be finite")
        if np.any(np.abs(theta) > np.pi / 2):
            raise ValueError("joint angle outside [-pi/2, pi/2]")
        object.__setattr__(self, "joint_angles", theta)

    @classmethod
    def straight(cls, params: CmParams | None = None) -> "CmState":
        params = params or CmParams()
        return cls(np.zeros(params.n_joints), params)

    @property
    def link_length(self) -> float:
        return self.params.link_length

    @property
    def headings(self) -> np.ndarray:
        return self.params.base_heading + np.cumsum(self.joint_angles)

    def backbone(self) -> np.ndarray:
        """Joint positions plus tip, shape ``(n_joints + 1, 2)``."""
        return _chain_points(self.joint_angles, self.params)

    def sample_points(self) -> np.ndarray:
        return _sample_points(self.backbone(), self.params.samples_per_link)[0]

    def arc_length(self) -> float:
        return float(np.linalg.norm(np.diff(self.backbone(), axis=0), axis=1).sum())


@dataclass(frozen=True)
class Obstacle:
    center: tuple[float, float]
    semi_axes: tuple[float, float]
    stiffness: float = 1.0e5

    def __post_init__(self):
        if min(self.semi_axes) <= 0:
            raise ValueError("obstacle semi-axes must be positive")
        if self.stiffness < 0:
            raise ValueError("obstacle stiffness must be non-negative")


class ConvergenceError(RuntimeError):
    """Raised when the equilibrium solver runs out of iterations."""

    def __init__(self, message: str, state: np.ndarray, grad_norm: float):
        super().__init__(f"{message} (scaled gradient norm {grad_norm:.3e})")
        self.state = state
        self.grad_norm = grad_norm


def _perp(v: np.ndarray) -> np.ndarray:
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


def _chain_points(theta: np.ndarray, params: CmParams) -> np.ndarray:
    phi = params.base_heading + np.cumsum(theta)
    steps = params.link_length * np.stack([np.cos(phi), np.sin(phi)], axis=1)
    pts = np.empty((len(theta) + 1, 2))
    pts[0] = params.base_xy
    pts[1:] = np.asarray(params.base_xy) + np.cumsum(steps, axis=0)
    return pts


def _sample_points(chain: np.ndarray, per_link: int):
    """Evenly spaced points along every link, base included.

    Returns the points and, for each point, the index of the link it lies on.
    """
    t = np.arange(1, per_link + 1) / per_link
    starts, ends = chain[:-1], chain[1:]
    pts = starts[:, None, :] + t[None, :, None] * (ends - starts)[:, None, :]
    link = np.repeat(np.arange(len(starts)), per_link)
    pts = np.concatenate([chain[:1], pts.reshape(-1, 2)])
    link = np.concatenate([[0], link])
    return pts, link


def ellipse_distance(u: np.ndarray, semi_axes, order: int = 0):
    """First-order signed distance from points ``u`` (relative to the
    ellipse center) to an axis-aligned ellipse boundary.

    ``s = (rho - 1) / |grad rho|`` with ``rho`` the normalized radius; exact for
    circles and first-order accurate near the boundary of any ellipse.
    Returns ``s`` and, for ``order >= 1``, its gradient ``(M, 2)`` and for
    ``order >= 2`` its Hessian ``(M, 2, 2)``.
    """
    a, b = semi_axes
    A = np.array([1 / a**2, 1 / b**2])
    B = A**2
    Au = u * A
    Bu = u * B
    rho = np.sqrt(np.einsum("ij,ij->i", u, Au))
    G = np.sqrt(np.einsum("ij,ij->i", u, Bu))
    f = rho * rho - rho
    s = f / G
    if order == 0:
        return s
    drho = Au / rho[:, None]
    dG = Bu / G[:, None]
    fp = 2 * rho - 1
    ds = fp[:, None] * drho / G[:, None] - f[:, None] * dG / (G * G)[:, None]
    if order == 1:
        return s, ds
    outer = lambda x, y: x[:, :, None] * y[:, None, :]  # noqa: E731
    d2rho = np.diag(A)[None] / rho[:, None, None] - outer(Au, Au) / (rho**3)[:, None, None]
    d2G = np.diag(B)[None] / G[:, None, None] - outer(Bu, Bu) / (G**3)[:, None, None]
    d2s = (
        (2 * outer(drho, drho) + fp[:, None, None] * d2rho) / G[:, None, None]
        - fp[:, None, None] * (outer(drho, dG) + outer(dG, drho)) / (G * G)[:, None, None]
        - f[:, None, None] * d2G / (G * G)[:, None, None]
        + 2 * f[:, None, None] * outer(dG, dG) / (G**3)[:, None, None]
    )
    return s, ds, d2s


def penetrations(state: CmState, obstacles) -> np.ndarray:
    """Penetration depth (mm, >= 0) of the tube into each obstacle."""
    pts = state.sample_points()
    r = state.params.tube_radius
    out = np.zeros(len(obstacles))
    for k, ob in enumerate(obstacles):
        s = ellipse_distance(pts - np.asarray(ob.center), ob.semi_axes)
        out[k] = max(0.0, float(np.max(r - s)))
    return out


def energy(theta, actuation: float, obstacles, params: CmParams, order: int = 0):
    """Total potential energy and optionally its gradient and Hessian."""
    theta = np.asarray(theta, dtype=float)
    J = len(theta)
    kappa, w, d = params.joint_stiffness, params.cable_weight, params.cable_offset
    mismatch = d * theta.sum() - actuation
    E = kappa * theta @ theta + w * mismatch**2
    if order >= 1:
        g = 2 * kappa * theta + 2 * w * d * mismatch
    if order >= 2:
        H = 2 * kappa * np.eye(J) + 2 * w * d * d
    if not obstacles:
        return (E, g, H)[: order + 1] if order else E

    chain = _chain_points(theta, params)
    pts, link = _sample_points(chain, params.samples_per_link)
    r = params.tube_radius
    for ob in obstacles:
        if ob.stiffness == 0:
            continue
        u = pts - np.asarray(ob.center)
        s = ellipse_distance(u, ob.semi_axes)
        active = np.nonzero(r - s > 0)[0]
        if active.size == 0:
            continue
        k = ob.stiffness
        res = ellipse_distance(u[active], ob.semi_axes, order=max(order, 0))
        s_a = res[0] if order else res
        pen = r - s_a
        E += k * float(pen @ pen)
        if order == 0:
            continue
        ds = res[1]
        q = pts[active]
        mask = np.arange(J)[None, :] <= link[active][:, None]  # (M, J)
        rel = q[:, None, :] - chain[None, :J, :]  # q - P_j
        jac = _perp(rel) * mask[:, :, None]  # (M, J, 2)
        jds = np.einsum("mjc,mc->mj", jac, ds)  # d s / d theta
        g += -2 * k * (pen @ jds)
        if order >= 2:
            d2s = res[2]
            H += 2 * k * jds.T @ jds
            curv = np.einsum("mjc,mcd,mld->mjl", jac, d2s, jac)
            # d^2 q / d theta_j d theta_l = -(q - P_max(j, l)) for j, l <= link
            proj = -np.einsum("mjc,mc->mj", rel, ds)  # (M, J)
            jl = np.maximum.outer(np.arange(J), np.arange(J))
            kin = proj[:, jl] * (mask[:, :, None] & mask[:, None, :])
            H -= 2 * k * np.einsum("m,mjl->jl", pen, curv + kin)
    if order == 0:
        return E
    return (E, g) if order == 1 else (E, g, H)


def _grad_scale(params: CmParams) -> float:
    return 2.0 * params.joint_stiffness


def solve_equilibrium(
    actuation: float,
    obstacles,
    prev: CmState | None = None,
    params: CmParams | None = None,
    tol: float = 1e-8,
    max_iter: int = 500,
    history: list | None = None,
) -> CmState:
    """Quasi-static equilibrium by damped Newton with a gradient fallback.

    Convergence is declared when ``|grad E| / (2 * joint_stiffness)`` falls
    below ``tol``, i.e. the residual expressed as an equivalent joint-angle
    error.  ``history``, if given, receives the energy of every iterate.
    """
    if prev is not None:
        params = prev.params
    params = params or CmParams()
    if abs(actuation) > params.max_actuation + 1e-12:
        raise ValueError(
            f"actuation {actuation} mm outside +/-{params.max_actuation} mm"
        )
    obstacles = list(obstacles)
    theta = (
        prev.joint_angles.copy() if prev is not None else np.zeros(params.n_joints)
    )
    scale = _grad_scale(params)
    E, g, H = energy(theta, actuation, obstacles, params, order=2)
    if history is not None:
        history.append(E)
    for _ in range(max_iter):
        gnorm = float(np.linalg.norm(g)) / scale
        if gnorm <= tol:
            return CmState(theta, params)
        step = _newton_direction(H, g)
        if step is None or g @ step >= 0:
            step = -g / scale
        theta_new = None
        if -(g @ step) <= 1e-11 * max(1.0, abs(E)):
            # predicted decrease is below the rounding noise of E; judge the
            # full step by the gradient it leaves instead
            cand = theta + step
            if np.max(np.abs(cand)) < np.pi / 2:
                E_c, g_c, H_c = energy(cand, actuation, obstacles, params, order=2)
                if np.linalg.norm(g_c) < np.linalg.norm(g):
                    theta_new = cand
        if theta_new is None:
            theta_new = _line_search(theta, E, g, step, actuation, obstacles, params)
            if theta_new is None and not np.array_equal(step, -g / scale):
                theta_new = _line_search(theta, E, g, -g / scale, actuation, obstacles, params)
            if theta_new is None:
                break
            E_c, g_c, H_c = energy(theta_new, actuation, obstacles, params, order=2)
        theta, E, g, H = theta_new, E_c, g_c, H_c
        if history is not None:
            history.append(E)
    gnorm = float(np.linalg.norm(g)) / scale
    if gnorm <= tol:
        return CmState(theta, params)
    raise ConvergenceError("equilibrium solver did not converge", theta, gnorm)


def _newton_direction(H, g):
    lam = 0.0
    n = len(g)
    diag = float(np.max(np.abs(np.diag(H))))
    for _ in range(30):
        try:
            L = np.linalg.cholesky(H + lam * np.eye(n))
        except np.linalg.LinAlgError:
            lam = max(10 * lam, 1e-10 * diag)
            continue
        y = np.linalg.solve(L, -g)
        return np.linalg.solve(L.T, y)
    return None


def _line_search(theta, E, g, step, actuation, obstacles, params):
    # keep every joint inside its +/- pi/2 range
    limit = np.pi / 2 - 1e-9
    alpha = 1.0
    slope = float(g @ step)
    for _ in range(60):
        cand = theta + alpha * step
        if np.max(np.abs(cand)) <= limit:
            E_c = energy(cand, actuation, obstacles, params)
            if E_c < E and E_c <= E + 1e-4 * alpha * slope:
                return cand
        alpha *= 0.5
    return None
