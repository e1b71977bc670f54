"""Per-frame streaming latency for the full, desk and tiny configs (random weights)."""
import argparse

from darccn.metrics import bench_latency
from darccn.model import DESK_CONFIG, FULL_CONFIG, TINY_CONFIG, init_params


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--utterances", type=int, default=20)
    ap.add_argument("--trials", type=int, default=5)
    ap.add_argument("--seconds", type=float, default=1.0)
    args = ap.parse_args()
    for name, cfg in (("full", FULL_CONFIG), ("desk", DESK_CONFIG), ("tiny", TINY_CONFIG)):
        rep = bench_latency(init_params(cfg), cfg, args.utterances, args.trials, args.seconds)
        print(f"== {name} ==")
        print(rep.to_text())
    print("== harness only ==")
    print(bench_latency(None, FULL_CONFIG, args.utterances, args.trials, args.seconds).to_text())


if __name__ == "__main__":
    main()
