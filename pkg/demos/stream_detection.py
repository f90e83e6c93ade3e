"""Stream an unseen trial through the detector and listen to its UDP output.

    python3 demos/stream_detection.py [--trees 200]
"""
import argparse
import socket
import threading

from cmcd.detector import ReplaySource, decode_datagram, run_detector, score_episodes
from cmcd.gbt import Hyperparams, train
from cmcd.pipeline import build_dataset
from cmcd.sim.presets import offline_scenarios, unseen_scenarios
from cmcd.sim.scenario import run_scenario


def listen(sock, got):
    sock.settimeout(0.5)
    try:
        while True:
            got.append(decode_datagram(sock.recv(64)))
    except socket.timeout:
        pass


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--trees", type=int, default=200)
    args = ap.parse_args()

    ds, _ = build_dataset(offline_scenarios(0, 5, 30.0))
    model = train(ds.X, ds.y, Hyperparams(n_estimators=args.trees, learning_rate=0.6,
                                          max_features="log2"))
    print(f"trained {args.trees} trees on {len(ds)} rows")

    rx = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    rx.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 1 << 22)
    rx.bind(("127.0.0.1", 0))
    for scenario in unseen_scenarios(0, duration=20.0):
        run = run_scenario(scenario)
        got = []
        listener = threading.Thread(target=listen, args=(rx, got))
        listener.start()
        log = run_detector(model, ReplaySource.from_run(run), sink=rx.getsockname())
        listener.join()
        s = score_episodes(log.timestamps, log.labels, run.contact)
        print(f"{scenario.id:22s} {s.detected}/{s.n_episodes} episodes, "
              f"FPR {s.false_positive_rate * 100:.2f}%, {log.throughput:.0f} frames/s, "
              f"p99 {log.latency_percentile(99) * 1e3:.2f} ms, {len(got)} datagrams received")
    rx.close()


if __name__ == "__main__":
    main()
