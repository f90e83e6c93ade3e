"""Command-line entry point: ``cmcd <subcommand> ...``.

Exit codes: 0 success, 1 usage, 2 data error, 3 solver convergence failure.
``CMCD_OUTPUT_ROOT`` sets where outputs go when ``--out`` is not given.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import vision
from .dataset import LabeledDataset, load_dataset, save_dataset, synchronize
from .gbt import GbtModel, Hyperparams, staged_eval, train, write_training_log
from .sim.model import ConvergenceError

log = logging.getLogger("cmcd")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CONVERGENCE = 0, 1, 2, 3
OUTPUT_ROOT_ENV = "CMCD_OUTPUT_ROOT"


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class RunManifest:
    """What a subcommand produced, with content hashes.

    Written as ``manifest.<subcommand>.json`` in the output directory, first
    with ``complete: false`` and rewritten when the subcommand finishes.
    """

    subcommand: str
    output_dir: str
    config: str | None = None
    seed: int | None = None
    argv: list = field(default_factory=list)
    started: float = field(default_factory=time.time)
    finished: float | None = None
    artifacts: dict = field(default_factory=dict)  # path relative to output_dir -> sha256
    complete: bool = False
    error: str | None = None

    @property
    def path(self) -> Path:
        return Path(self.output_dir) / f"manifest.{self.subcommand}.json"

    def add(self, path) -> None:
        p = Path(path).resolve()
        root = Path(self.output_dir).resolve()
        key = p.relative_to(root).as_posix() if p.is_relative_to(root) else str(p)
        self.artifacts[key] = sha256_file(p)

    def write(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n")

    @classmethod
    def read(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))


def require(path, producer: str) -> Path:
    """Fail with the manifest entry a missing input should have come from."""
    p = Path(path)
    manifest = p.parent / f"manifest.{producer}.json"
    if not manifest.exists() and p.parent.parent != p.parent:
        manifest = p.parent.parent / f"manifest.{producer}.json"
    if not p.exists():
        raise DataError(
            f"missing upstream artifact {p}: expected as an entry of {manifest} "
            f"(run `cmcd {producer}` first)")
    if manifest.exists():
        m = RunManifest.read(manifest)
        if not m.complete:
            raise DataError(f"upstream manifest {manifest} is marked incomplete"
                            + (f" ({m.error})" if m.error else ""))
    return p


def default_out(args, name: str) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "cmcd-out")) / name


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(","))


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.split(","))


def _strs(text: str) -> tuple:
    return tuple(v.strip() for v in text.split(","))


# -- subcommands ---------------------------------------------------------------

def _scenarios_from_args(args):
    from .sim.scenario import load_scenarios

    try:
        scenarios = load_scenarios(args.config)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"{args.config}: invalid scenario config: {exc}") from exc
    if args.only:
        scenarios = [s for s in scenarios if s.id in set(args.only)]
        if not scenarios:
            raise UsageError(f"no scenario matches --only {args.only}")
    over = {}
    if args.duration is not None:
        over["duration"] = args.duration
    if args.noise_std is not None:
        over["noise_std"] = args.noise_std
    out = []
    for i, s in enumerate(scenarios):
        kw = dict(over)
        if args.seed is not None:
            kw["rng_seed"] = args.seed * 1000 + i
        try:
            out.append(dataclasses.replace(s, **kw))
        except ValueError as exc:
            raise UsageError(f"scenario {s.id}: {exc}") from exc
    return out


def cmd_simulate(args, manifest: RunManifest) -> None:
    from .sim.scenario import run_scenario, save_scenarios, write_run

    manifest.config = str(args.config)
    manifest.seed = args.seed
    scenarios = _scenarios_from_args(args)
    out = Path(manifest.output_dir)
    for s in scenarios:
        log.info("simulating %s (%.1f s)", s.id, s.duration)
        run = run_scenario(s)
        sdir = out / s.id
        for p in write_run(run, sdir, frames=not args.no_frames):
            manifest.add(p)
        save_scenarios(sdir / "scenario.yaml", [s])
        manifest.add(sdir / "scenario.yaml")
        manifest.write()
        print(f"{s.id}: {len(run.sensor_t)} sensor rows, {len(run.camera_t)} frames, "
              f"contact fraction {run.contact.mean():.3f}")


def _n_obstacles(frames_dir: Path, given: int | None) -> int:
    if given is not None:
        return given
    from .sim.scenario import load_scenarios

    cfg = frames_dir.parent / "scenario.yaml"
    if not cfg.exists():
        raise UsageError(f"--obstacles not given and {cfg} not found")
    return len(load_scenarios(cfg)[0].obstacles)


def cmd_label(args, manifest: RunManifest) -> None:
    frames = Path(args.frames_dir)
    if not frames.is_dir():
        require(frames, "simulate")
        raise DataError(f"{frames} is not a directory")
    n_obs = _n_obstacles(frames, args.obstacles)
    rows, dropped = vision.label_frames(frames, n_obs, args.threshold, args.kernel,
                                        args.connectivity, args.on_noisy)
    out = Path(args.output) if args.output else Path(manifest.output_dir) / "labels.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    vision.write_label_csv(out, rows)
    manifest.add(out)
    print(f"{len(rows)} frames labeled, {sum(r[2] for r in rows)} collisions, {dropped} dropped")


def cmd_build_dataset(args, manifest: RunManifest) -> None:
    pairs = []
    for d in args.run_dirs:
        d = Path(d)
        pairs.append((d.name, require(d / "sensor.csv", "simulate"),
                      require(d / "labels.csv", "label")))
    if args.sensor or args.labels:
        if not (args.sensor and args.labels):
            raise UsageError("--sensor and --labels go together")
        pairs.append((args.scenario_id or Path(args.sensor).parent.name,
                      require(args.sensor, "simulate"), require(args.labels, "label")))
    if not pairs:
        raise UsageError("give run directories or --sensor/--labels")
    from .sim.scenario import read_sensor_csv

    parts = []
    for sid, sensor, labels in pairs:
        t, values = read_sensor_csv(sensor)
        rows = vision.read_label_csv(labels)
        lt = np.array([r[0] for r in rows])
        lab = np.array([r[2] for r in rows], dtype=int)
        parts.append(synchronize(t, values, lt, lab, sid, args.exclude_transitions))
    ds = LabeledDataset.concat(parts)
    ds = LabeledDataset(ds.timestamps, ds.X, ds.y, ds.groups, ds.scenario_ids,
                        {"label_source": "vision",
                         "exclude_transitions": str(bool(args.exclude_transitions)).lower()})
    out = Path(args.output) if args.output else Path(manifest.output_dir) / "dataset.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out)
    manifest.add(out)
    print(f"{len(ds)} rows from {len(pairs)} scenarios, {ds.positives} positive")


def _hyperparams(args) -> Hyperparams:
    base = {}
    if args.params:
        doc = json.loads(require(args.params, "tune").read_text())
        base = doc.get("hyperparams", doc)
    for name in ("n_estimators", "learning_rate", "max_depth", "subsample", "max_features",
                 "seed", "min_samples_leaf"):
        val = getattr(args, name)
        if val is not None:
            base[name] = val
    try:
        return Hyperparams(**base)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad hyperparameters: {exc}") from exc


def _load(path, producer: str) -> LabeledDataset:
    return load_dataset(require(path, producer))


def cmd_train(args, manifest: RunManifest) -> None:
    hp = _hyperparams(args)
    manifest.seed = hp.seed
    data = _load(args.dataset, "build-dataset")
    test = _load(args.test, "build-dataset") if args.test else None
    if args.holdout:
        if args.holdout not in data.scenario_ids:
            raise UsageError(f"--holdout {args.holdout} is not a scenario of {args.dataset}")
        gi = data.scenario_ids.index(args.holdout)
        test = data.subset(np.nonzero(data.groups == gi)[0])
        data = data.subset(np.nonzero(data.groups != gi)[0])
    elif args.holdout_fold is not None:
        from .dataset import kfold_split

        fold, _, k = args.holdout_fold.partition("/")
        try:
            fold, k = int(fold), int(k or 4)
            if fold < 0:
                raise ValueError("fold index must be non-negative")
            tr_idx, te_idx = list(kfold_split(len(data), k, args.fold_seed).folds())[fold]
        except (ValueError, IndexError) as exc:
            raise UsageError(f"bad --holdout-fold {args.holdout_fold}: {exc}") from exc
        test, data = data.subset(te_idx), data.subset(tr_idx)
    t0 = time.perf_counter()
    model = train(data.X, data.y, hp)
    elapsed = time.perf_counter() - t0
    out = Path(manifest.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    model.save(out / "model.txt")
    manifest.add(out / "model.txt")
    tr = staged_eval(model, data.X, data.y)
    te = staged_eval(model, test.X, test.y) if test is not None else None
    write_training_log(out / "training_log.csv", tr, te)
    manifest.add(out / "training_log.csv")
    msg = f"trained {hp.n_estimators} trees in {elapsed:.1f} s; train accuracy {tr.accuracy[-1]:.4f}"
    if te is not None:
        msg += f"; test accuracy {te.accuracy[-1]:.4f}"
    print(msg)
    print(f"model sha256 {manifest.artifacts['model.txt']}")


def _grid(args):
    from .tuner import Grid

    kw = {}
    if args.grid:
        doc = yaml.safe_load(Path(args.grid).read_text()) or {}
        kw.update(doc.get("grid", doc))
    for name, conv in (("learning_rates", _floats), ("max_features_options", _strs),
                       ("subsamples", _floats), ("n_estimators", _ints),
                       ("max_depths", _ints)):
        val = getattr(args, name)
        if val is not None:
            kw[name] = conv(val)
    for name in ("k", "seed"):
        if getattr(args, name) is not None:
            kw[name] = getattr(args, name)
    try:
        return Grid(**kw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad grid: {exc}") from exc


def cmd_tune(args, manifest: RunManifest) -> None:
    from .tuner import grid_search

    grid = _grid(args)
    manifest.config = args.grid
    manifest.seed = grid.seed
    data = _load(args.dataset, "build-dataset")
    out = Path(manifest.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    def progress(r):
        state = "failed: " + r.error if r.error else f"{r.mean_accuracy:.2f}% +- {r.std_deviation:.2f}"
        print(f"  lr={r.hp.learning_rate:g} max_features={r.hp.max_features} "
              f"subsample={r.hp.subsample:g}: {state}", flush=True)

    report = grid_search(data, grid, workers=args.workers, progress=progress)
    report.to_csv(out / "cv_report.csv")
    (out / "cv_table.txt").write_text(report.table() + "\n")
    manifest.add(out / "cv_report.csv")
    manifest.add(out / "cv_table.txt")
    print(report.table())
    if not report.complete:
        raise DataError("some configurations did not complete; see cv_report.csv")
    best = report.chosen
    (out / "best.json").write_text(json.dumps(
        {"hyperparams": dataclasses.asdict(best), "fold_digest": report.fold_digest},
        indent=2, sort_keys=True) + "\n")
    manifest.add(out / "best.json")


def _address(text: str | None):
    if text is None or text.lower() == "none":
        return None
    host, _, port = text.rpartition(":")
    try:
        return host or "127.0.0.1", int(port)
    except ValueError:
        raise UsageError(f"--sink expects host:port, got {text!r}") from None


def cmd_detect(args, manifest: RunManifest) -> None:
    from .detector import StreamConfig, run_from_config, score_episodes

    out = Path(manifest.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_path = Path(args.log) if args.log else out / "detections.csv"
    try:
        cfg = StreamConfig(
            model_path=str(require(args.model, "train")),
            source=args.source,
            replay_path=str(require(args.replay, "simulate")),
            truth_path=str(require(args.truth, "simulate")) if args.truth else None,
            sink=_address(args.sink),
            decision_threshold=args.threshold,
            rate=args.rate,
            queue_size=args.queue_size,
            log_path=str(log_path),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    det = run_from_config(cfg)
    manifest.add(log_path)
    summary = {
        "frames": len(det), "dropped": det.dropped, "send_errors": det.send_errors,
        "throughput_fps": det.throughput,
        "latency_p50_ms": 1e3 * det.latency_percentile(50),
        "latency_p99_ms": 1e3 * det.latency_percentile(99),
        "predicted_positive": int(det.labels.sum()),
    }
    if det.truth is not None:
        s = score_episodes(det.timestamps, det.labels, det.truth)
        summary.update(episodes=s.n_episodes, detected=s.detected,
                       false_positive_rate=s.false_positive_rate)
    (out / "detect_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    for k, v in summary.items():
        print(f"{k}: {v:.4g}" if isinstance(v, float) else f"{k}: {v}")


def _named(items, producer: str) -> dict:
    out = {}
    for item in items or []:
        name, sep, path = item.partition("=")
        if not sep:
            name, path = Path(item).parent.name or Path(item).stem, item
        out[name] = require(path, producer)
    return out


def cmd_report(args, manifest: RunManifest) -> None:
    from . import report
    from .detector import read_detection_csv

    cv = report.read_cv_csv(require(args.cv, "tune")) if args.cv else None
    logs = {k: report.read_training_log(p) for k, p in _named(args.training_log, "train").items()}
    dets = {k: read_detection_csv(p) for k, p in _named(args.detections, "detect").items()}
    if cv is None and not logs and not dets:
        raise UsageError("nothing to report: give --cv, --training-log or --detections")
    for p in report.render(manifest.output_dir, cv, logs, dets):
        manifest.add(p)
        print(p)


def cmd_make_config(args, manifest: RunManifest) -> None:
    from .sim import presets
    from .sim.scenario import save_scenarios

    if args.preset == "offline":
        scen = presets.offline_scenarios(args.seed, args.placements,
                                         args.duration or presets.OFFLINE_DURATION)
    elif args.preset == "unseen":
        scen = presets.unseen_scenarios(args.seed, args.duration or 30.0)
    else:
        scen = presets.offline_scenarios(args.seed, args.placements, args.duration or 12.0)
    out = Path(args.output) if args.output else Path(manifest.output_dir) / f"{args.preset}.yaml"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_scenarios(out, scen, f"preset={args.preset} seed={args.seed}")
    manifest.seed = args.seed
    manifest.add(out)
    print(out)


def cmd_pipeline(args, manifest: RunManifest) -> None:
    """simulate -> label -> build-dataset -> tune -> train, in one output tree."""
    out = Path(manifest.output_dir)
    manifest.config = str(args.config)
    manifest.seed = args.seed
    common = ["-q"] if args.quiet else []
    sim = ["simulate", str(args.config), "--out", str(out / "sim")]
    if args.seed is not None:
        sim += ["--seed", str(args.seed)]
    if args.duration is not None:
        sim += ["--duration", str(args.duration)]
    steps = [sim]
    from .sim.scenario import load_scenarios

    ids = [s.id for s in load_scenarios(args.config)]
    for sid in ids:
        steps.append(["label", str(out / "sim" / sid / "frames"),
                      "-o", str(out / "sim" / sid / "labels.csv"), "--out", str(out / "sim" / sid)])
    steps.append(["build-dataset", *[str(out / "sim" / sid) for sid in ids],
                  "--out", str(out / "dataset")])
    tune = ["tune", str(out / "dataset" / "dataset.csv"), "--out", str(out / "tune")]
    if args.grid:
        tune += ["--grid", str(args.grid)]
    steps.append(tune)
    steps.append(["train", str(out / "dataset" / "dataset.csv"),
                  "--params", str(out / "tune" / "best.json"), "--out", str(out / "model")])
    for step in steps:
        print("$ cmcd " + " ".join(step), flush=True)
        code = main(common + step)
        if code != EXIT_OK:
            raise _StepFailed(code, step[0])
    model = out / "model" / "model.txt"
    manifest.add(model)
    print(f"final model sha256 {manifest.artifacts[model.relative_to(out).as_posix()]}")


class _StepFailed(Exception):
    def __init__(self, code, step):
        super().__init__(f"step {step} exited with {code}")
        self.code = code


# -- parser ------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cmcd", description="Continuum-manipulator collision detection pipeline.")
    p.add_argument("-q", "--quiet", action="store_true", help="only warnings on stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def out_arg(sp):
        sp.add_argument("--out", help=f"output directory (default ${OUTPUT_ROOT_ENV}/<command>)")

    s = sub.add_parser("simulate", help="simulate scenarios to sensor/truth CSVs and frames")
    s.add_argument("config", help="scenario YAML")
    out_arg(s)
    s.add_argument("--seed", type=int, help="override every scenario's rng seed")
    s.add_argument("--duration", type=float, help="override every scenario's duration (s)")
    s.add_argument("--noise-std", type=float)
    s.add_argument("--only", nargs="+", metavar="ID", help="simulate only these scenario ids")
    s.add_argument("--no-frames", action="store_true", help="skip writing PGM frames")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("label", help="label PGM frames by connected components")
    s.add_argument("frames_dir")
    out_arg(s)
    s.add_argument("-o", "--output", help="label CSV path (default <out>/labels.csv)")
    s.add_argument("--obstacles", type=int, help="obstacle count (default: from scenario.yaml)")
    s.add_argument("--threshold", type=int, default=128)
    s.add_argument("--kernel", type=int, default=3)
    s.add_argument("--connectivity", type=int, choices=(4, 8), default=8)
    s.add_argument("--on-noisy", choices=("drop", "reopen", "raise"), default="drop")
    s.set_defaults(func=cmd_label)

    s = sub.add_parser("build-dataset", help="join sensor rows with frame labels")
    s.add_argument("run_dirs", nargs="*", help="directories holding sensor.csv and labels.csv")
    out_arg(s)
    s.add_argument("-o", "--output", help="dataset CSV path (default <out>/dataset.csv)")
    s.add_argument("--sensor")
    s.add_argument("--labels")
    s.add_argument("--scenario-id")
    s.add_argument("--exclude-transitions", action="store_true")
    s.set_defaults(func=cmd_build_dataset)

    s = sub.add_parser("train", help="train a boosted-tree model")
    s.add_argument("dataset")
    out_arg(s)
    s.add_argument("--params", help="JSON hyperparameters, e.g. best.json from tune")
    s.add_argument("--test", help="test dataset for the staged deviance log")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--holdout", metavar="SCENARIO", help="hold one scenario out as the test set")
    g.add_argument("--holdout-fold", metavar="I[/K]",
                   help="hold k-fold test fold I out (K defaults to 4)")
    s.add_argument("--fold-seed", type=int, default=0, help="seed of the --holdout-fold split")
    s.add_argument("-n", "--n-estimators", type=int)
    s.add_argument("--learning-rate", type=float)
    s.add_argument("--max-depth", type=int)
    s.add_argument("--subsample", type=float)
    s.add_argument("--max-features", choices=("all", "log2"))
    s.add_argument("--min-samples-leaf", type=int)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("tune", help="k-fold grid search")
    s.add_argument("dataset")
    out_arg(s)
    s.add_argument("--grid", help="YAML with Grid fields")
    s.add_argument("--learning-rates", help="comma list")
    s.add_argument("--max-features-options", help="comma list of all/log2")
    s.add_argument("--subsamples", help="comma list")
    s.add_argument("--n-estimators", help="comma list")
    s.add_argument("--max-depths", help="comma list")
    s.add_argument("-k", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_tune)

    s = sub.add_parser("detect", help="stream a recording through a model")
    s.add_argument("--model", required=True)
    s.add_argument("--replay", required=True, help="sensor CSV")
    s.add_argument("--truth", help="truth CSV for episode scoring")
    s.add_argument("--source", choices=("replay", "live"), default="replay")
    s.add_argument("--sink", default="127.0.0.1:9000", help="host:port or 'none'")
    s.add_argument("--threshold", type=float, default=0.5)
    s.add_argument("--rate", type=float, default=100.0, help="frame rate for live pacing (Hz)")
    s.add_argument("--queue-size", type=int, default=64)
    s.add_argument("--log", help="detection CSV path (default <out>/detections.csv)")
    out_arg(s)
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("report", help="tables and plots from earlier outputs")
    s.add_argument("--cv", help="cv_report.csv from tune")
    s.add_argument("--training-log", action="append", metavar="[NAME=]CSV")
    s.add_argument("--detections", action="append", metavar="[NAME=]CSV")
    out_arg(s)
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("make-config", help="write a preset scenario YAML")
    s.add_argument("preset", choices=("offline", "unseen", "quick"))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--placements", type=int, default=5)
    s.add_argument("--duration", type=float)
    s.add_argument("-o", "--output")
    out_arg(s)
    s.set_defaults(func=cmd_make_config)

    s = sub.add_parser("pipeline", help="simulate, label, build-dataset, tune and train")
    s.add_argument("config")
    s.add_argument("--grid")
    s.add_argument("--seed", type=int)
    s.add_argument("--duration", type=float)
    out_arg(s)
    s.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    manifest = RunManifest(args.command, str(default_out(args, args.command)),
                           argv=list(sys.argv[1:] if argv is None else argv))
    code, err = EXIT_OK, None
    try:
        manifest.write()
        args.func(args, manifest)
    except UsageError as exc:
        code, err = EXIT_USAGE, str(exc)
    except ConvergenceError as exc:
        code, err = EXIT_CONVERGENCE, f"solver did not converge: {exc}"
    except _StepFailed as exc:
        code, err = exc.code, str(exc)
    except (DataError, ValueError, OSError) as exc:
        code, err = EXIT_DATA, str(exc)
    manifest.finished = time.time()
    manifest.complete = code == EXIT_OK
    manifest.error = err
    try:
        manifest.write()
    except OSError as exc:
        log.error("could not write manifest: %s", exc)
    if err:
        print(f"cmcd {args.command}: error: {err}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
