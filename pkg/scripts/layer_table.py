"""Print the per-layer parameter / MAC table as Markdown (used for the README)."""
import argparse

from darccn.model import DESK_CONFIG, FULL_CONFIG, TINY_CONFIG, count_macs, layer_report

CONFIGS = {"full": FULL_CONFIG, "desk": DESK_CONFIG, "tiny": TINY_CONFIG}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", choices=sorted(CONFIGS), default="full")
    ap.add_argument("--group", action="store_true", help="collapse layers into module groups")
    args = ap.parse_args()
    cfg = CONFIGS[args.config]
    rows = layer_report(cfg)
    if args.group:
        grouped = {}
        for name, p, m in rows:
            key = name.rstrip("0123456789")
            acc = grouped.setdefault(key, [0, 0, 0])
            acc[0] += 1
            acc[1] += p
            acc[2] += m
        rows = [(f"{k}* (x{n})" if n > 1 else k, p, m) for k, (n, p, m) in grouped.items()]
    print("| layer | params | MACs / frame (all stages) |")
    print("|---|---:|---:|")
    for name, p, m in rows:
        print(f"| `{name}` | {p:,} | {m:,} |")
    total_p = sum(r[1] for r in rows)
    print(f"| **total** | **{total_p:,}** | **{count_macs(cfg):,}** |")


if __name__ == "__main__":
    main()
