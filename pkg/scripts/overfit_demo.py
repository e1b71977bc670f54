"""Overfit a desk-scale model on a few synthetic pairs and print the loss curve.

A quick check that the loss, autodiff and optimizer work together; it says
nothing about enhancement quality on real speech.
"""
import argparse
import time

from darccn import data, model, training


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--pairs", type=int, default=4)
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--seconds", type=float, default=0.25)
    ap.add_argument("--lr", type=float, default=2e-4)
    ap.add_argument("--snr", type=int, default=5)
    ap.add_argument("--scale", type=int, default=4)
    ap.add_argument("--every", type=int, default=50)
    args = ap.parse_args()

    cfg = model.with_overrides(model.DESK_CONFIG, scale=args.scale)
    pairs = []
    for i in range(args.pairs):
        clean = data.synthetic_speech(args.seconds, seed=i)
        noisy, clean = data.mix_pair(clean, data.synthetic_noise(args.seconds, seed=100 + i), args.snr)
        pairs.append((training.features_for(noisy, cfg), training.features_for(clean, cfg)))
    tr = training.Trainer(model.init_params(cfg, seed=0), cfg, training.TrainConfig(lr=args.lr, batch=args.pairs))
    t0 = time.perf_counter()
    first = None
    for step in range(1, args.steps + 1):
        loss = tr.step(pairs)
        first = first if first is not None else loss
        if step == 1 or step % args.every == 0 or step == args.steps:
            print(f"step {step:5d}  loss {loss:.6f}  ({100 * (1 - loss / first):5.1f}% below start)  {time.perf_counter() - t0:7.1f} s")


if __name__ == "__main__":
    main()
