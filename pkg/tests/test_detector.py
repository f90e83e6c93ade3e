import socket
import threading

import numpy as np
import pytest

from cmcd.detector import (
    DetectionOutput,
    LiveSource,
    ReplaySource,
    StreamConfig,
    _DropOldestQueue,
    decode_datagram,
    encode_datagram,
    episodes,
    read_detection_csv,
    run_detector,
    run_from_config,
    score_episodes,
)
from cmcd.gbt import Hyperparams, train
from cmcd.sim.scenario import write_run


@pytest.fixture(scope="module")
def model(short_run):
    return train(short_run.sensor_values, short_run.contact.astype(int),
                 Hyperparams(n_estimators=60, learning_rate=0.6, max_features="log2"))


def test_datagram_examples():
    assert encode_datagram(1.234, 0.875, 1) == b"CMCD1 1234 0.875000 1\n"
    assert encode_datagram(0, 0, 0) == b"CMCD1 0 0.000000 0\n"
    assert len(encode_datagram(1e9, 1.0, 1)) <= 64
    with pytest.raises(ValueError):
        encode_datagram(0, 1.5, 1)
    with pytest.raises(ValueError):
        decode_datagram(b"CMCD2 1 0.5 1\n")


def test_datagram_round_trip(rng):
    for _ in range(1000):
        t = int(rng.integers(0, 10**7)) / 1000
        p = round(float(rng.random()), 6)
        lab = int(rng.integers(0, 2))
        assert decode_datagram(encode_datagram(t, p, lab)) == (t, p, lab)


def test_stream_config_validation():
    with pytest.raises(ValueError):
        StreamConfig(rate=0)
    with pytest.raises(ValueError):
        StreamConfig(decision_threshold=1.5)
    with pytest.raises(ValueError):
        StreamConfig(source="tcp")


def test_emitted_probability_is_exact(short_run, model):
    log = run_detector(model, ReplaySource.from_run(short_run), sink=None)
    assert len(log) == len(short_run.sensor_t) and log.dropped == 0
    assert np.array_equal(log.probabilities, model.predict_proba(short_run.sensor_values))
    assert np.array_equal(log.labels, (log.probabilities >= 0.5).astype(int))


def test_datagrams_on_the_wire(short_run, model):
    rx = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    rx.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 1 << 22)
    rx.bind(("127.0.0.1", 0))
    rx.settimeout(1.0)
    log = run_detector(model, ReplaySource.from_run(short_run), sink=rx.getsockname())
    got = []
    try:
        while len(got) < len(log):
            got.append(decode_datagram(rx.recv(64)))
    except socket.timeout:
        pass
    rx.close()
    assert len(got) == len(log)
    assert [g[1] for g in got] == [float(f"{p:.6f}") for p in log.probabilities]
    assert [g[0] for g in got] == [round(t, 3) for t in log.timestamps]


def test_threshold_one_gives_no_positives(short_run, model):
    log = run_detector(model, ReplaySource.from_run(short_run), None, decision_threshold=1.0)
    assert log.labels.sum() == 0


def test_replay_reproduces_training_labels(short_run, model):
    log = run_detector(model, ReplaySource.from_run(short_run), None)
    assert np.mean(log.labels == short_run.contact) >= 0.95


def test_dimension_mismatch_aborts(model):
    src = ReplaySource(np.arange(3) / 100, np.zeros((3, 4)))
    with pytest.raises(ValueError, match="channels"):
        run_detector(model, src, None)


def test_unreachable_sink_does_not_stop(short_run, model):
    log = run_detector(model, ReplaySource.from_run(short_run), sink=("no-such-host.invalid", 9))
    assert len(log) == len(short_run.sensor_t)
    assert log.send_errors == len(log)


def test_replay_determinism(tmp_path, short_run, model):
    a = run_detector(model, ReplaySource.from_run(short_run), None, log_path=tmp_path / "a.csv")
    b = run_detector(model, ReplaySource.from_run(short_run), None, log_path=tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    back = read_detection_csv(tmp_path / "a.csv")
    assert np.array_equal(back.probabilities, a.probabilities)
    assert np.array_equal(back.truth, short_run.contact)
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == "timestamp,probability,label,truth"


def test_replay_from_files(tmp_path, short_run, model):
    write_run(short_run, tmp_path, frames=False)
    model.save(tmp_path / "model.txt")
    cfg = StreamConfig(model_path=str(tmp_path / "model.txt"), replay_path=str(tmp_path / "sensor.csv"),
                       truth_path=str(tmp_path / "truth.csv"), sink=None,
                       log_path=str(tmp_path / "det.csv"))
    log = run_from_config(cfg)
    assert np.array_equal(log.probabilities, model.predict_proba(short_run.sensor_values))
    assert (tmp_path / "det.csv").exists()


def test_live_source_paces_and_drops(short_run, model):
    src = LiveSource(short_run.sensor_t[:50], short_run.sensor_values[:50], rate=500.0)
    log = run_detector(model, src, None)
    assert len(log) + log.dropped == 50
    assert log.wall_time >= 49 / 500


def test_drop_oldest_queue():
    q = _DropOldestQueue(2)
    for i in range(5):
        q.put_latest(i)
    assert q.dropped == 3
    assert [q.get_nowait(), q.get_nowait()] == [3, 4]


def test_live_overflow_counts_drops(short_run):
    class Slow:
        n_features = 9

        def __init__(self):
            self.gate = threading.Event()

        def predict_proba(self, x):
            self.gate.wait(0.002)
            return np.array([0.5])

    src = LiveSource(short_run.sensor_t[:200], short_run.sensor_values[:200], rate=5000.0)
    log = run_detector(Slow(), src, None, queue_size=2)
    assert log.dropped > 0 and len(log) + log.dropped == 200


def test_detection_output_is_plain_record():
    d = DetectionOutput(0.5, 0.7, 1)
    assert (d.timestamp, d.probability, d.predicted_label) == (0.5, 0.7, 1)


def test_episode_scoring():
    assert episodes([0, 1, 1, 0, 1]) == [(1, 3), (4, 5)]
    t = np.arange(100) / 100
    truth = np.zeros(100, bool)
    truth[10:50] = True  # 400 ms
    truth[70:80] = True  # 100 ms, below the 300 ms floor
    pred = np.zeros(100, bool)
    pred[30] = True
    pred[90] = True
    s = score_episodes(t, pred, truth)
    assert (s.n_episodes, s.detected) == (1, 1) and s.all_detected
    assert s.false_positive_rate == pytest.approx(1 / 50)
