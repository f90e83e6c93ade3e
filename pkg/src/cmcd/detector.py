"""Streaming collision detection with a UDP probability feed.

A source thread pushes sensor frames into a bounded queue; the consumer runs
the model on each frame, sends one datagram and appends one log row.
"""
from __future__ import annotations

import csv
import logging
import queue
import socket
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .gbt import GbtModel
from .sim.scenario import ScenarioRun, read_sensor_csv, read_truth_csv
from .sim.sensors import SensorFrame

log = logging.getLogger(__name__)

MAGIC = "CMCD1"
MAX_DATAGRAM = 64


def encode_datagram(timestamp: float, probability: float, label: int) -> bytes:
    """``CMCD1 <t_ms> <p:.6f> <0|1>\\n`` in ASCII."""
    if not 0.0 <= probability <= 1.0:
        raise ValueError(f"probability {probability} outside [0, 1]")
    msg = f"{MAGIC} {int(round(timestamp * 1000))} {probability:.6f} {int(bool(label))}\n"
    return msg.encode("ascii")


def decode_datagram(data: bytes) -> tuple[float, float, int]:
    parts = data.decode("ascii").split()
    if len(parts) != 4 or parts[0] != MAGIC or not data.endswith(b"\n"):
        raise ValueError(f"malformed datagram {data!r}")
    return int(parts[1]) / 1000.0, float(parts[2]), int(parts[3])


@dataclass(frozen=True)
class DetectionOutput:
    timestamp: float
    probability: float
    predicted_label: int


@dataclass(frozen=True)
class StreamConfig:
    model_path: str | None = None
    source: str = "replay"  # "replay" or "live"
    replay_path: str | None = None  # sensor CSV for replay
    truth_path: str | None = None
    sink: tuple[str, int] | None = ("127.0.0.1", 9000)
    decision_threshold: float = 0.5
    rate: float = 100.0  # Hz, pacing for live sources
    queue_size: int = 64
    log_path: str | None = None

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("rate must be positive")
        if not 0.0 <= self.decision_threshold <= 1.0:
            raise ValueError("decision_threshold must lie in [0, 1]")
        if self.source not in ("replay", "live"):
            raise ValueError("source must be 'replay' or 'live'")


@dataclass
class DetectionLog:
    timestamps: np.ndarray
    probabilities: np.ndarray
    labels: np.ndarray
    truth: np.ndarray | None
    latencies: np.ndarray  # seconds, inference + encode per frame
    dropped: int = 0
    send_errors: int = 0
    wall_time: float = 0.0

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def throughput(self) -> float:
        return len(self) / self.wall_time if self.wall_time > 0 else float("inf")

    def latency_percentile(self, q: float) -> float:
        return float(np.percentile(self.latencies, q)) if len(self.latencies) else 0.0

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["timestamp", "probability", "label", "truth"])
            for i in range(len(self)):
                truth = "" if self.truth is None else int(self.truth[i])
                w.writerow([f"{self.timestamps[i]:.17g}", f"{self.probabilities[i]:.17g}",
                            int(self.labels[i]), truth])


def read_detection_csv(path) -> DetectionLog:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if next(reader) != ["timestamp", "probability", "label", "truth"]:
            raise ValueError(f"{path}: unexpected header")
        rows = list(reader)
    truth = None
    if rows and rows[0][3] != "":
        truth = np.array([r[3] == "1" for r in rows])
    return DetectionLog(
        np.array([float(r[0]) for r in rows]), np.array([float(r[1]) for r in rows]),
        np.array([int(r[2]) for r in rows]), truth, np.zeros(len(rows)),
    )


# -- sources ------------------------------------------------------------------

class ReplaySource:
    """Frames from a recorded sensor CSV (or arrays), optionally with truth."""

    live = False

    def __init__(self, timestamps, values, truth=None):
        self.timestamps = np.asarray(timestamps, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self.truth = None if truth is None else np.asarray(truth, dtype=bool)

    @classmethod
    def from_csv(cls, sensor_path, truth_path=None) -> "ReplaySource":
        t, values = read_sensor_csv(sensor_path)
        truth = None
        if truth_path is not None:
            tt, contact, _ = read_truth_csv(truth_path)
            if not np.array_equal(tt, t):
                raise ValueError("truth timestamps do not match the sensor stream")
            truth = contact
        return cls(t, values, truth)

    @classmethod
    def from_run(cls, run: ScenarioRun) -> "ReplaySource":
        return cls(run.sensor_t, run.sensor_values, run.contact)

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def frames(self):
        for i, t in enumerate(self.timestamps):
            yield i, SensorFrame(float(t), self.values[i])


class LiveSource(ReplaySource):
    """Frames released in real time at ``rate`` Hz, as a live rig would."""

    live = True

    def __init__(self, timestamps, values, truth=None, rate: float = 100.0):
        super().__init__(timestamps, values, truth)
        self.rate = rate

    @classmethod
    def from_run(cls, run: ScenarioRun, rate: float | None = None) -> "LiveSource":
        return cls(run.sensor_t, run.sensor_values, run.contact,
                   rate or run.scenario.sensor_rate)

    def frames(self):
        start = time.perf_counter()
        for i, frame in super().frames():
            delay = start + i / self.rate - time.perf_counter()
            if delay > 0:
                time.sleep(delay)
            yield i, frame


class _DropOldestQueue(queue.Queue):
    def __init__(self, maxsize):
        super().__init__(maxsize)
        self.dropped = 0

    def put_latest(self, item):
        while True:
            try:
                self.put_nowait(item)
                return
            except queue.Full:
                try:
                    self.get_nowait()
                    self.dropped += 1
                except queue.Empty:
                    pass


_END = object()


class UdpSink:
    def __init__(self, address: tuple[str, int] | None):
        self.address = address
        self.errors = 0
        self.sock = None
        self._target = None
        if address is not None:
            self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            self.sock.setblocking(False)
            # resolve once; a name lookup per frame would stall the loop
            try:
                self._target = socket.getaddrinfo(address[0], address[1], socket.AF_INET,
                                                  socket.SOCK_DGRAM)[0][4]
            except OSError as exc:
                log.warning("cannot resolve sink %s: %s", address, exc)

    def send(self, payload: bytes) -> None:
        if self.sock is None:
            return
        try:
            if self._target is None:
                raise OSError("sink address did not resolve")
            self.sock.sendto(payload, self._target)
        except OSError as exc:
            # unreachable or refusing sinks must not stop detection
            self.errors += 1
            if self.errors == 1 or self.errors % 1000 == 0:
                log.warning("datagram send to %s failed (%d so far): %s",
                            self.address, self.errors, exc)

    def close(self) -> None:
        if self.sock is not None:
            self.sock.close()


def run_detector(model: GbtModel, source: ReplaySource, sink: tuple[str, int] | None = None,
                 decision_threshold: float = 0.5, queue_size: int = 64,
                 log_path=None) -> DetectionLog:
    """Run the model over a sensor stream.

    Replay sources block when the queue is full, so no frame is lost; live
    sources drop the oldest queued frame and count it.
    """
    if source.n_features != model.n_features:
        raise ValueError(
            f"stream has {source.n_features} channels, model expects {model.n_features}")
    q = _DropOldestQueue(queue_size)

    def produce():
        for item in source.frames():
            if source.live:
                q.put_latest(item)
            else:
                q.put(item)
        q.put(_END)

    producer = threading.Thread(target=produce, name="cmcd-source", daemon=True)
    udp = UdpSink(sink)
    idx, ts, probs, labels, lat = [], [], [], [], []
    start = time.perf_counter()
    producer.start()
    try:
        while True:
            item = q.get()
            if item is _END:
                break
            i, frame = item
            t0 = time.perf_counter()
            p = float(model.predict_proba(frame.values)[0])
            lab = int(p >= decision_threshold)
            payload = encode_datagram(frame.timestamp, p, lab)
            lat.append(time.perf_counter() - t0)
            udp.send(payload)
            idx.append(i)
            ts.append(frame.timestamp)
            probs.append(p)
            labels.append(lab)
    finally:
        producer.join(timeout=5.0)
        udp.close()
    idx = np.array(idx, dtype=int)
    out = DetectionLog(
        np.array(ts), np.array(probs), np.array(labels, dtype=int),
        None if source.truth is None else source.truth[idx],
        np.array(lat), q.dropped, udp.errors, time.perf_counter() - start,
    )
    if out.dropped:
        log.warning("live stream: %d frames dropped", out.dropped)
    if log_path is not None:
        out.write_csv(log_path)
    return out


def run_from_config(cfg: StreamConfig, run: ScenarioRun | None = None) -> DetectionLog:
    if cfg.model_path is None:
        raise ValueError("StreamConfig.model_path is required")
    model = GbtModel.load(cfg.model_path)
    if run is not None:
        source = (LiveSource.from_run(run, cfg.rate) if cfg.source == "live"
                  else ReplaySource.from_run(run))
    elif cfg.replay_path is not None:
        source = ReplaySource.from_csv(cfg.replay_path, cfg.truth_path)
        if cfg.source == "live":
            source = LiveSource(source.timestamps, source.values, source.truth, cfg.rate)
    else:
        raise ValueError("no stream source configured")
    path = Path(cfg.log_path) if cfg.log_path else None
    return run_detector(model, source, cfg.sink, cfg.decision_threshold, cfg.queue_size, path)


# -- episode scoring -----------------------------------------------------------

def episodes(mask) -> list[tuple[int, int]]:
    """Half-open index ranges ``[start, stop)`` where ``mask`` is true."""
    m = np.concatenate([[False], np.asarray(mask, dtype=bool), [False]])
    edges = np.flatnonzero(np.diff(m.astype(int)))
    return list(zip(edges[::2].tolist(), edges[1::2].tolist()))


@dataclass(frozen=True)
class EpisodeScore:
    n_episodes: int  # contact episodes at least min_duration long
    detected: int
    false_positive_rate: float  # fraction of no-contact frames flagged

    @property
    def all_detected(self) -> bool:
        return self.detected == self.n_episodes


def score_episodes(timestamps, predicted, truth, min_duration: float = 0.3) -> EpisodeScore:
    t = np.asarray(timestamps, dtype=float)
    predicted = np.asarray(predicted, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    dt = float(np.median(np.diff(t))) if len(t) > 1 else 0.0
    n = hit = 0
    for a, b in episodes(truth):
        if (b - a) * dt < min_duration - 1e-9:
            continue
        n += 1
        hit += bool(predicted[a:b].any())
    free = ~truth
    fpr = float(predicted[free].mean()) if free.any() else 0.0
    return EpisodeScore(n, hit, fpr)
