"""``darccn`` command line: enhance, train, mix, eval, inspect, bench, init.

Exit codes: 0 success, 1 usage, 2 I/O, 3 shape/config, 4 divergence.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import data, metrics, model, training
from .config import format_config, load_config
from .errors import AudioFormatError, ConfigError, DarccnError, ShapeMismatch, WeightsFormatError
from .model import ModelConfig
from .nncore import ParamRegistry, count_params, load_weights, save_weights
from .signal import read_wav, write_wav

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_SHAPE, EXIT_DIVERGED = 0, 1, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


def _resolved(cfg: ModelConfig, tcfg=None) -> None:
    _say("resolved config:")
    for line in format_config(cfg, tcfg).splitlines():
        _say(f"  {line}")


def _model_config(args, default: ModelConfig = model.FULL_CONFIG):
    cfg, tcfg = (load_config(args.config) if getattr(args, "config", None) else (default, training.TrainConfig()))
    over = {}
    if getattr(args, "scale", None) is not None:
        over["scale"] = args.scale
    if getattr(args, "stages", None) is not None:
        over["num_stages"] = args.stages
    if getattr(args, "fft_size", None) is not None:
        over["fft_size"] = args.fft_size
    if over:
        try:
            cfg = replace(cfg, **over)
        except ValueError as e:
            raise ConfigError(str(e)) from e
    if getattr(args, "seed", None) is not None:
        tcfg = replace(tcfg, seed=args.seed)
    return cfg, tcfg


def load_model(path) -> tuple[ParamRegistry, ModelConfig]:
    tensors, counts = load_weights(path)
    try:
        cfg = ModelConfig.from_counts(counts)
    except (ConfigError, ValueError, TypeError) as e:
        raise WeightsFormatError(f"{path}: bad config block: {e}") from e
    params = model.init_params(cfg, seed=0)
    params.load_state(tensors)
    return params, cfg


def cmd_init(args) -> int:
    cfg, tcfg = _model_config(args)
    _resolved(cfg)
    params = model.init_params(cfg, seed=tcfg.seed)
    save_weights(args.out, params.state(), cfg.to_counts())
    print(f"wrote {args.out} ({count_params(params)} parameters)")
    return EXIT_OK


def cmd_enhance(args) -> int:
    params, cfg = load_model(args.weights)
    if args.config:
        want, _ = load_config(args.config)
        if want != cfg:
            raise ShapeMismatch("weights file was built for a different model config")
    _resolved(cfg)
    x = read_wav(args.inp)
    t0 = time.perf_counter()
    if args.streaming:
        y = model.enhance_streaming(x, params, cfg)
    else:
        y = model.enhance_utterance(x, params, cfg)
    write_wav(args.out, y)
    _say(f"enhanced {len(x)} samples in {time.perf_counter() - t0:.3f} s ({'streaming' if args.streaming else 'batch'})")
    return EXIT_OK


def cmd_mix(args) -> int:
    rows = data.read_manifest(args.manifest)
    _say(f"resolved config:\n  seed = {args.seed}\n  clip_seconds = {args.clip_seconds}\n  workers = {args.workers}")
    report = data.build_dataset(rows, args.out, seed=args.seed, clip_len=args.clip_seconds,
                                in_base=Path(args.manifest).parent, workers=args.workers)
    text = report.to_text()
    print(text)
    (Path(args.out) / "report.txt").write_text(text + "\n")
    return EXIT_OK if not report.errors else EXIT_IO


def cmd_train(args) -> int:
    cfg, tcfg = _model_config(args)
    if args.max_epochs is not None:
        tcfg = replace(tcfg, max_epochs=args.max_epochs)
    _resolved(cfg, tcfg)
    params = model.init_params(cfg, seed=tcfg.seed)
    if args.init_weights:
        p2, c2 = load_model(args.init_weights)
        if c2 != cfg:
            raise ShapeMismatch("--init-weights was built for a different model config")
        params = p2
    tr = training.train(training.load_pairs(args.data, cfg), training.load_pairs(args.val, cfg),
                        params, cfg, tcfg, args.out, resume=args.resume)
    for e, a, b, lr in tr.history:
        print(f"epoch {e:4d}  train {a:.6g}  val {b:.6g}  lr {lr:.3g}")
    print(f"best_val={tr.sched.best_val:.6g} epochs={tr.epoch} stopped={int(tr.sched.stopped)}")
    return EXIT_OK


def cmd_eval(args) -> int:
    params, cfg = load_model(args.weights)
    _resolved(cfg)
    pairs = data.list_pairs(args.pairs)
    if not pairs:
        raise AudioFormatError(f"no noisy/clean pairs under {args.pairs}")
    rep = metrics.EvalReport()
    noisy_rep = metrics.EvalReport()
    for noisy_path, clean_path in pairs:
        noisy, clean = read_wav(noisy_path), read_wav(clean_path)
        rep.add(noisy_path.stem, clean, model.enhance_utterance(noisy, params, cfg))
        noisy_rep.add(noisy_path.stem, clean, noisy)
    print("enhanced:")
    print(rep.to_text())
    print("unprocessed:")
    print(noisy_rep.to_text())
    Path(args.report).write_text(rep.to_csv())
    return EXIT_OK


def inspect_text(cfg: ModelConfig) -> str:
    rows = model.layer_report(cfg)
    w = max(len(r[0]) for r in rows)
    total_p = sum(r[1] for r in rows)
    total_m = sum(r[2] for r in rows)
    lines = [f"{'layer':<{w}}  {'params':>10}  {'macs/frame':>12}"]
    lines += [f"{n:<{w}}  {p:>10d}  {m:>12d}" for n, p, m in rows]
    lines.append(f"{'TOTAL':<{w}}  {total_p:>10d}  {total_m:>12d}")
    lines.append(f"stages={cfg.num_stages} (weights shared; MACs summed over stages)")
    lines += [f"{n}\t{p}\t{m}" for n, p, m in rows]
    lines.append(f"total\t{total_p}\t{total_m}")
    return "\n".join(lines)


def cmd_inspect(args) -> int:
    cfg, _ = _model_config(args)
    _resolved(cfg)
    print(inspect_text(cfg))
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.weights:
        params, cfg = load_model(args.weights)
        params = params.astype(np.float32) if args.float32 else params
    else:
        cfg, tcfg = _model_config(args)
        params = model.init_params(cfg, seed=tcfg.seed, dtype=np.float32 if args.float32 else np.float64)
    _resolved(cfg)
    rep = metrics.bench_latency(params, cfg, utterances=args.utterances, trials=args.trials, seconds=args.seconds)
    print(rep.to_text())
    if args.report:
        Path(args.report).write_text(rep.to_csv())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="darccn", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    def model_flags(sp, with_seed=True):
        sp.add_argument("--config", help="flat key=value config file (model and training keys)")
        sp.add_argument("--scale", type=int, help="divide every channel count by this (desk-scale runs)")
        sp.add_argument("--stages", type=int, help="override the number of recursive stages")
        sp.add_argument("--fft-size", type=int, help="override the FFT size (window = FFT, hop = FFT/2)")
        if with_seed:
            sp.add_argument("--seed", type=int, default=None, help="RNG seed")

    sp = sub.add_parser("enhance", help="enhance one WAV file")
    sp.add_argument("--in", dest="inp", required=True, help="input WAV (16-bit PCM mono 16 kHz)")
    sp.add_argument("--out", required=True, help="output WAV")
    sp.add_argument("--weights", required=True, help="weights file")
    sp.add_argument("--config", help="optional config the weights must match")
    sp.add_argument("--streaming", action="store_true", help="use the frame-by-frame path")
    sp.set_defaults(fn=cmd_enhance)

    sp = sub.add_parser("mix", help="synthesise noisy/clean pairs from a manifest")
    sp.add_argument("--manifest", required=True, help="CSV with header clean,noise,snr_db,out_noisy,out_clean")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--seed", type=int, default=0, help="RNG seed")
    sp.add_argument("--clip-seconds", type=float, default=data.CLIP_SECONDS, help="fixed clip length")
    sp.add_argument("--workers", type=int, default=1, help="parallel rows (output is identical)")
    sp.set_defaults(fn=cmd_mix)

    sp = sub.add_parser("train", help="train with multi-stage MSE and the validation schedule")
    sp.add_argument("--data", required=True, help="training pairs dir (noisy/ and clean/)")
    sp.add_argument("--val", required=True, help="validation pairs dir")
    sp.add_argument("--out", required=True, help="checkpoint/history directory")
    sp.add_argument("--max-epochs", type=int, help="override max_epochs")
    sp.add_argument("--resume", action="store_true", help="continue from OUT/last.*")
    sp.add_argument("--init-weights", help="start from this weights file")
    model_flags(sp)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("eval", help="STOI / SI-SDR / SNR over a pairs directory")
    sp.add_argument("--pairs", required=True, help="dir with noisy/ and clean/")
    sp.add_argument("--weights", required=True, help="weights file")
    sp.add_argument("--report", required=True, help="CSV report path")
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("inspect", help="per-layer parameter and MAC accounting")
    model_flags(sp, with_seed=False)
    sp.set_defaults(fn=cmd_inspect)

    sp = sub.add_parser("bench", help="per-frame streaming latency")
    sp.add_argument("--weights", help="weights file (random init of --config if omitted)")
    sp.add_argument("--utterances", type=int, default=500, help="utterances per trial")
    sp.add_argument("--trials", type=int, default=5, help="repetitions")
    sp.add_argument("--seconds", type=float, default=1.0, help="length of each synthetic utterance")
    sp.add_argument("--float32", action="store_true", help="run inference in 32-bit floats")
    sp.add_argument("--report", help="CSV report path")
    model_flags(sp)
    sp.set_defaults(fn=cmd_bench)

    sp = sub.add_parser("init", help="write randomly initialised weights")
    sp.add_argument("--out", required=True, help="weights file")
    model_flags(sp)
    sp.set_defaults(fn=cmd_init)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except DarccnError as e:
        _say(f"error: {e}")
        return e.exit_code
    except FileNotFoundError as e:
        _say(f"error: {e}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
