"""Scenario definitions, recording runs and their on-disk formats."""
from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .model import CmParams, CmState, Obstacle, penetrations, solve_equilibrium
from .sensors import N_CHANNELS, local_curvatures, make_calibration, rasterize, world_to_pixel

BG_LEVEL = 25
FG_LEVEL = 230


@dataclass(frozen=True)
class RasterConfig:
    width: int = 640
    height: int = 480
    mm_per_px: float = 0.1
    gray_noise: int = 20  # uniform +/- amplitude on every pixel
    salt_prob: float = 2e-4  # isolated bright pixels per frame


@dataclass(frozen=True)
class Actuation:
    """Cable displacement ``offset + amplitude * sin(2 pi t / period + phase)``,
    or piecewise-linear through ``knots`` when given."""

    amplitude: float = 3.75
    period: float = 6.0
    offset: float = 0.0
    phase: float = 0.0
    knots: tuple = ()

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.knots:
            kt, ka = np.asarray(self.knots, dtype=float).T
            return np.interp(t, kt, ka)
        return self.offset + self.amplitude * np.sin(2 * np.pi * t / self.period + self.phase)


@dataclass(frozen=True)
class Scenario:
    id: str
    obstacles: tuple[Obstacle, ...]
    actuation: Actuation
    calibration: np.ndarray
    duration: float = 10.0
    sensor_rate: int = 100
    camera_rate: int = 30
    noise_std: float = 0.5
    rng_seed: int = 0
    cm: CmParams = field(default_factory=CmParams)
    raster: RasterConfig = field(default_factory=RasterConfig)

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("scenario duration must be positive")
        if not self.sensor_rate > self.camera_rate > 0:
            raise ValueError("need sensor_rate > camera_rate > 0")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        object.__setattr__(self, "calibration", np.asarray(self.calibration, dtype=float))

    @property
    def tube_width_px(self) -> float:
        return 2 * self.cm.tube_radius / self.raster.mm_per_px

    @property
    def n_sensor_frames(self) -> int:
        return int(np.ceil(self.duration * self.sensor_rate - 1e-9))

    @property
    def n_camera_frames(self) -> int:
        return int(np.ceil(self.duration * self.camera_rate - 1e-9))


@dataclass
class ScenarioRun:
    """Everything recorded during one scenario.

    Camera frames are rendered lazily from the stored equilibrium states so a
    long recording does not hold hundreds of megabytes of images.
    """

    scenario: Scenario
    sensor_t: np.ndarray
    sensor_values: np.ndarray
    contact: np.ndarray
    penetration: np.ndarray
    camera_t: np.ndarray
    camera_angles: np.ndarray
    camera_contact: np.ndarray

    def camera_state(self, m: int) -> CmState:
        return CmState(self.camera_angles[m], self.scenario.cm)

    def binary_frame(self, m: int) -> np.ndarray:
        s, rc = self.scenario, self.scenario.raster
        return rasterize(self.camera_state(m), s.obstacles, rc.width, rc.height,
                         rc.mm_per_px, s.tube_width_px)

    def image(self, m: int) -> np.ndarray:
        """8-bit camera frame ``m`` with gray-level and salt noise."""
        s, rc = self.scenario, self.scenario.raster
        fg = self.binary_frame(m)
        rng = np.random.default_rng([s.rng_seed, 1, m])
        gray = np.where(fg, FG_LEVEL, BG_LEVEL).astype(np.int16)
        if rc.gray_noise:
            gray += rng.integers(-rc.gray_noise, rc.gray_noise + 1, gray.shape, dtype=np.int16)
        if rc.salt_prob:
            n_salt = rng.binomial(gray.size, rc.salt_prob)
            idx = rng.integers(0, gray.size, n_salt)
            gray.reshape(-1)[idx] = 255
        return np.clip(gray, 0, 255).astype(np.uint8)

    def images(self):
        for m, t in enumerate(self.camera_t):
            yield float(t), self.image(m)

    def base_pixel(self) -> tuple[int, int]:
        rc = self.scenario.raster
        bx, by = self.scenario.cm.base_xy
        # a pixel just above the base, inside the tube
        return world_to_pixel((bx, by + 0.5), rc.mm_per_px, rc.height)

    def obstacle_pixels(self) -> list[tuple[int, int]]:
        rc = self.scenario.raster
        return [world_to_pixel(o.center, rc.mm_per_px, rc.height)
                for o in self.scenario.obstacles]


def run_scenario(s: Scenario) -> ScenarioRun:
    """Drive the manipulator through the actuation profile.

    Equilibria are solved in time order at the union of sensor and camera
    instants, each warm-started from the previous one.
    """
    n_s, n_c = s.n_sensor_frames, s.n_camera_frames
    # compare k / sensor_rate with m / camera_rate in exact integer arithmetic
    events = sorted(
        [(k * s.camera_rate, 0, k) for k in range(n_s)]
        + [(m * s.sensor_rate, 1, m) for m in range(n_c)]
    )
    act = s.actuation
    J = s.cm.n_joints
    sensor_angles = np.empty((n_s, J))
    camera_angles = np.empty((n_c, J))
    penetration = np.empty(n_s)
    camera_pen = np.empty(n_c)
    state = CmState.straight(s.cm)
    last_key, last_pen = None, None
    for key, kind, idx in events:
        if key != last_key:
            t = key / (s.sensor_rate * s.camera_rate)
            state = solve_equilibrium(float(act(t)), s.obstacles, state)
            last_pen = float(penetrations(state, s.obstacles).max()) if s.obstacles else 0.0
            last_key = key
        if kind == 0:
            sensor_angles[idx] = state.joint_angles
            penetration[idx] = last_pen
        else:
            camera_angles[idx] = state.joint_angles
            camera_pen[idx] = last_pen

    curv = np.array([local_curvatures(CmState(a, s.cm)) for a in sensor_angles])
    values = curv @ s.calibration.T
    if s.noise_std > 0:
        rng = np.random.default_rng([s.rng_seed, 0])
        values = values + rng.normal(0.0, s.noise_std, values.shape)
    return ScenarioRun(
        scenario=s,
        sensor_t=np.arange(n_s) / s.sensor_rate,
        sensor_values=values,
        contact=penetration > 0,
        penetration=penetration,
        camera_t=np.arange(n_c) / s.camera_rate,
        camera_angles=camera_angles,
        camera_contact=camera_pen > 0,
    )


def place_obstacle(
    params: CmParams,
    bend: float,
    arc_fraction: float,
    semi_axes,
    stiffness: float = 1.0e5,
) -> Obstacle:
    """Obstacle that the tube first touches when uniformly bent by ``bend``
    radians, at the given fraction of its length (on the bending side)."""
    theta = np.full(params.n_joints, bend / params.n_joints)
    state = CmState(theta, params)
    chain = state.backbone()
    s = arc_fraction * params.length
    i = min(int(s // params.link_length), params.n_joints - 1)
    frac = s / params.link_length - i
    point = chain[i] + frac * (chain[i + 1] - chain[i])
    heading = state.headings[i]
    normal = np.sign(bend) * np.array([-np.sin(heading), np.cos(heading)])
    a, b = semi_axes
    support = np.hypot(a * normal[0], b * normal[1])
    center = point + normal * (params.tube_radius + support)
    return Obstacle((float(center[0]), float(center[1])), (float(a), float(b)), float(stiffness))


# -- file formats -----------------------------------------------------------

def scenario_to_dict(s: Scenario) -> dict:
    act = dataclasses.asdict(s.actuation)
    if act["knots"]:
        act = {"knots": [list(map(float, k)) for k in s.actuation.knots]}
    else:
        act.pop("knots")
    return {
        "id": s.id,
        "duration": float(s.duration),
        "sensor_rate": int(s.sensor_rate),
        "camera_rate": int(s.camera_rate),
        "noise_std": float(s.noise_std),
        "rng_seed": int(s.rng_seed),
        "actuation": act,
        "obstacles": [
            {"center": list(o.center), "semi_axes": list(o.semi_axes),
             "stiffness": float(o.stiffness)}
            for o in s.obstacles
        ],
        "calibration": [[float(v) for v in row] for row in s.calibration],
        "cm": {k: (list(v) if isinstance(v, tuple) else v)
               for k, v in dataclasses.asdict(s.cm).items()},
        "raster": dataclasses.asdict(s.raster),
    }


def scenario_from_dict(d: dict, defaults: dict | None = None) -> Scenario:
    d = {**(defaults or {}), **d}
    cm = CmParams(**{k: (tuple(v) if isinstance(v, list) else v)
                     for k, v in d.get("cm", {}).items()})
    act = dict(d.get("actuation", {}))
    if "knots" in act:
        act["knots"] = tuple(tuple(k) for k in act["knots"])
    obstacles = tuple(
        Obstacle(tuple(o["center"]), tuple(o["semi_axes"]), o.get("stiffness", 1.0e5))
        for o in d.get("obstacles", [])
    )
    calibration = d.get("calibration")
    if calibration is None:
        calibration = make_calibration(np.random.default_rng([int(d.get("rng_seed", 0)), 2]))
    return Scenario(
        id=str(d["id"]),
        obstacles=obstacles,
        actuation=Actuation(**act),
        calibration=np.asarray(calibration, dtype=float),
        duration=float(d.get("duration", 10.0)),
        sensor_rate=int(d.get("sensor_rate", 100)),
        camera_rate=int(d.get("camera_rate", 30)),
        noise_std=float(d.get("noise_std", 0.5)),
        rng_seed=int(d.get("rng_seed", 0)),
        cm=cm,
        raster=RasterConfig(**d.get("raster", {})),
    )


def load_scenarios(path) -> list[Scenario]:
    """Read a YAML config holding either one scenario or a ``scenarios`` list.

    Top-level keys other than ``scenarios`` act as defaults for every entry.
    """
    doc = yaml.safe_load(Path(path).read_text())
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: expected a mapping")
    if "scenarios" in doc:
        defaults = {k: v for k, v in doc.items() if k != "scenarios"}
        return [scenario_from_dict(entry, defaults) for entry in doc["scenarios"]]
    return [scenario_from_dict(doc)]


def save_scenarios(path, scenarios, comment: str | None = None) -> None:
    text = yaml.safe_dump({"scenarios": [scenario_to_dict(s) for s in scenarios]},
                          sort_keys=False, default_flow_style=None, width=100)
    if comment:
        text = "".join(f"# {line}\n" for line in comment.splitlines()) + text
    Path(path).write_text(text)


def write_sensor_csv(path, t, values) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp"] + [f"v{i + 1}" for i in range(values.shape[1])])
        for ts, row in zip(t, values):
            w.writerow([f"{ts:.17g}"] + [f"{v:.17g}" for v in row])


def read_sensor_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[0] != "timestamp" or len(header) != N_CHANNELS + 1:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = [[float(v) for v in r] for r in reader]
    arr = np.array(rows, dtype=float).reshape(-1, N_CHANNELS + 1)
    return arr[:, 0], arr[:, 1:]


def write_truth_csv(path, t, contact, penetration) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", "contact", "penetration"])
        for ts, c, p in zip(t, contact, penetration):
            w.writerow([f"{ts:.17g}", int(c), f"{p:.17g}"])


def read_truth_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if next(reader) != ["timestamp", "contact", "penetration"]:
            raise ValueError(f"{path}: unexpected header")
        rows = list(reader)
    t = np.array([float(r[0]) for r in rows])
    return t, np.array([r[1] == "1" for r in rows]), np.array([float(r[2]) for r in rows])


def write_run(run: ScenarioRun, out_dir, frames: bool = True) -> list[Path]:
    """Write sensor/truth CSVs and PGM frames; returns the written paths."""
    from ..vision import write_pgm

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "sensor.csv", out / "truth.csv"]
    write_sensor_csv(written[0], run.sensor_t, run.sensor_values)
    write_truth_csv(written[1], run.sensor_t, run.contact, run.penetration)
    if frames:
        fdir = out / "frames"
        fdir.mkdir(exist_ok=True)
        for t, gray in run.images():
            p = fdir / f"frame_{int(round(t * 1000))}.pgm"
            write_pgm(p, gray, t)
            written.append(p)
    return written
