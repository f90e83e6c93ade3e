"""In-memory glue: simulated recordings to labeled datasets."""
from __future__ import annotations

import numpy as np

from . import vision
from .dataset import LabeledDataset, synchronize
from .sim.scenario import ScenarioRun, run_scenario


def label_run(run: ScenarioRun, t: int = 128, kernel: int = 3, connectivity: int = 8):
    """Vision labels for every camera frame of a run.

    Returns ``(timestamps, component_counts, labels)``; frames rejected as
    noisy are left out.
    """
    n_obs = len(run.scenario.obstacles)
    ts, counts, labels = [], [], []
    for m, (stamp, gray) in enumerate(run.images()):
        try:
            count, lab = vision.label_frame(gray, n_obs, t, kernel, connectivity)
        except vision.NoisyFrameError:
            continue
        ts.append(stamp)
        counts.append(count)
        labels.append(lab)
    return np.array(ts), np.array(counts, dtype=int), np.array(labels, dtype=int)


def obstacle_meta(run: ScenarioRun) -> str:
    return ";".join(
        " ".join(f"{v:.6g}" for v in (*o.center, *o.semi_axes, o.stiffness))
        for o in run.scenario.obstacles
    ) or "none"


def dataset_from_run(run: ScenarioRun, exclude_transitions: bool = False) -> LabeledDataset:
    label_t, _, labels = label_run(run)
    return synchronize(
        run.sensor_t, run.sensor_values, label_t, labels, run.scenario.id,
        exclude_transitions=exclude_transitions,
    )


def build_dataset(scenarios, exclude_transitions: bool = False):
    """Simulate and auto-label each scenario.

    Returns the concatenated dataset and the runs (for their contact truth).
    """
    runs = [run_scenario(s) for s in scenarios]
    parts = [dataset_from_run(r, exclude_transitions) for r in runs]
    ds = LabeledDataset.concat(parts)
    meta = {"n_scenarios": str(len(runs)), "label_source": "vision"}
    meta.update({f"obstacles_{r.scenario.id}": obstacle_meta(r) for r in runs})
    return LabeledDataset(ds.timestamps, ds.X, ds.y, ds.groups, ds.scenario_ids, meta), runs
