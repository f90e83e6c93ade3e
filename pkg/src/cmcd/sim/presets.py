"""Scenario sets used for training and for the unseen-obstacle trials.

Material parameters and the actuation profile are not known for the physical
rig; the values here are choices of this package.
"""
from __future__ import annotations

import numpy as np

from .model import CmParams, CmState, Obstacle, penetrations, solve_equilibrium
from .scenario import Actuation, Scenario, place_obstacle
from .sensors import make_calibration

HARD = 1.0e5
SOFT = 1.0e2
OFFLINE_DURATION = 114.0  # s per placement; five placements give 57,000 rows


def _calibration(seed: int) -> np.ndarray:
    return make_calibration(np.random.default_rng([seed, 2]))


def _sweep(rng, amplitude: float) -> Actuation:
    return Actuation(
        amplitude=float(amplitude),
        period=float(rng.uniform(5.0, 7.0)),
        offset=0.0,
        # start at zero displacement so the first solve is a small step
        phase=float(rng.choice([0.0, np.pi])),
    )


def _clear_of_start(ob: Obstacle, params: CmParams, margin: float = 1.0) -> bool:
    # the straight tube and the tube bent fully away must not touch it
    for bend in (0.0, -np.sign(ob.center[0] - params.base_xy[0]) * 1.6):
        grown = Obstacle(ob.center, tuple(a + margin for a in ob.semi_axes), ob.stiffness)
        state = CmState(np.full(params.n_joints, bend / params.n_joints), params)
        if penetrations(state, [grown]).max() > 0:
            return False
    lo = np.asarray(ob.center) - ob.semi_axes
    hi = np.asarray(ob.center) + ob.semi_axes
    return bool(np.all(lo > 1.0) and hi[0] < 63.0 and hi[1] < 47.0)


def _releases(ob: Obstacle, params: CmParams, actuation: float) -> bool:
    """Bending into the obstacle and back must end free of it, without the
    tip curling; rejects placements the tip could slide past or jam on."""
    state = CmState.straight(params)
    path = np.concatenate([np.linspace(0, 1, 25), np.linspace(1, 0, 25)])
    touched = False
    for f in path:
        state = solve_equilibrium(f * actuation, [ob], state)
        touched |= bool(penetrations(state, [ob]).max() > 0)
        if np.abs(state.joint_angles).max() > 0.6:
            return False
    return touched and penetrations(state, [ob]).max() == 0


def random_placement(rng, params: CmParams, semi_axes=None, stiffness: float = HARD,
                     side: float | None = None) -> tuple[Obstacle, float]:
    """Obstacle that a uniformly bent tube first touches at a random bend and
    arc position, plus a sweep amplitude (mm) that pushes somewhat past it."""
    side = rng.choice([-1.0, 1.0]) if side is None else side
    for _ in range(1000):
        bend = rng.uniform(0.55, 1.05)
        arc = rng.uniform(0.45, 0.85)
        overshoot = rng.uniform(0.35, 0.6)
        axes = semi_axes
        if axes is None:
            axes = (rng.uniform(2.0, 4.0), rng.uniform(2.0, 4.0))
        ob = place_obstacle(params, side * bend, arc, axes, stiffness)
        amplitude = min(params.max_actuation, (bend + overshoot) * params.cable_offset)
        if _clear_of_start(ob, params) and _releases(ob, params, side * amplitude):
            return ob, amplitude
    raise RuntimeError("could not place an obstacle clear of the start pose")


def offline_scenarios(seed: int = 0, n_placements: int = 5,
                      duration: float = OFFLINE_DURATION, noise_std: float = 0.5):
    """One hard oval obstacle, printed once, at ``n_placements`` locations."""
    rng = np.random.default_rng([seed, 10])
    params = CmParams()
    calibration = _calibration(seed)
    semi_axes = (float(rng.uniform(2.5, 3.5)), float(rng.uniform(1.8, 2.6)))
    out = []
    for i in range(n_placements):
        ob, amplitude = random_placement(rng, params, semi_axes, HARD, side=(-1.0) ** i)
        out.append(Scenario(
            id=f"offline-{i}",
            obstacles=(ob,),
            actuation=_sweep(rng, amplitude),
            calibration=calibration,
            duration=duration,
            noise_std=noise_std,
            rng_seed=int(seed * 1000 + i),
            cm=params,
        ))
    return out


def unseen_scenarios(seed: int = 0, duration: float = 30.0, noise_std: float = 0.5):
    """Held-out trials: new placement, soft obstacle, different shape, free motion.

    Uses the same sensor calibration as :func:`offline_scenarios` with the
    same seed, since it is the same instrumented manipulator.
    """
    rng = np.random.default_rng([seed, 20])
    params = CmParams()
    calibration = _calibration(seed)
    offline_axes = offline_scenarios(seed, 1, 1.0)[0].obstacles[0].semi_axes
    trials = {
        "new-placement": dict(semi_axes=offline_axes, stiffness=HARD),
        "soft": dict(semi_axes=(float(rng.uniform(3.0, 4.0)),) * 2, stiffness=SOFT),
        "other-shape": dict(semi_axes=(float(rng.uniform(1.2, 1.6)), float(rng.uniform(4.0, 5.0))),
                            stiffness=HARD),
    }
    out = []
    for i, (name, kw) in enumerate(trials.items()):
        ob, amplitude = random_placement(rng, params, side=rng.choice([-1.0, 1.0]), **kw)
        out.append(Scenario(
            id=f"unseen-{name}", obstacles=(ob,), actuation=_sweep(rng, amplitude),
            calibration=calibration, duration=duration, noise_std=noise_std,
            rng_seed=int(seed * 1000 + 500 + i), cm=params,
        ))
    out.append(Scenario(
        id="unseen-free", obstacles=(), actuation=_sweep(rng, 0.9 * params.max_actuation),
        calibration=calibration, duration=duration, noise_std=noise_std,
        rng_seed=int(seed * 1000 + 599), cm=params,
    ))
    return out
