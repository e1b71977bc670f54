"""End to end at toy scale: synthetic corpus -> manifest -> mixed pairs -> train -> eval.

Everything goes through the ``darccn`` CLI so the run doubles as a smoke test
of the command line. Output lands in ``--work`` (default ./demo_run).
"""
import argparse
from pathlib import Path

from darccn import cli, data


def run(*argv):
    argv = [str(a) for a in argv]
    print("$ darccn " + " ".join(argv), flush=True)
    code = cli.main(argv)
    if code:
        raise SystemExit(code)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--work", default="demo_run")
    ap.add_argument("--pairs", type=int, default=8)
    ap.add_argument("--epochs", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    work = Path(args.work)
    work.mkdir(parents=True, exist_ok=True)

    clean, noise = data.write_synthetic_corpus(work / "src", 6, 3, seconds=2.0, seed=args.seed)
    tr_clean, va_clean = data.split_clean(clean, 2, seed=args.seed)
    data.write_manifest(work / "train.csv", data.plan_manifest([f"src/{c}" for c in tr_clean],
                                                               [f"src/{n}" for n in noise], args.pairs, seed=args.seed))
    data.write_manifest(work / "val.csv", data.plan_manifest([f"src/{c}" for c in va_clean],
                                                             [f"src/{n}" for n in noise], 2, seed=args.seed + 1))
    run("mix", "--manifest", work / "train.csv", "--out", work / "train", "--seed", args.seed, "--clip-seconds", 1.0)
    run("mix", "--manifest", work / "val.csv", "--out", work / "val", "--seed", args.seed, "--clip-seconds", 1.0)
    (work / "desk.cfg").write_text("scale = 4\nfft_size = 64\nlr = 0.001\nbatch = 4\n")
    run("train", "--data", work / "train", "--val", work / "val", "--config", work / "desk.cfg",
        "--out", work / "ckpt", "--max-epochs", args.epochs, "--seed", args.seed)
    run("eval", "--pairs", work / "val", "--weights", work / "ckpt" / "best.bin", "--report", work / "eval.csv")


if __name__ == "__main__":
    main()
