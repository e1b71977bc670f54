"""Multi-stage MSE training with Adam and a validation-driven schedule.

Schedule: a validation loss that does not beat the best seen so far extends a
"bad streak"; when the streak reaches ``halve_after`` the learning rate halves
(once per streak), when it reaches ``stop_after`` training stops.
"""
from __future__ import annotations

import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data import list_pairs
from .errors import InvalidArgument, ShapeMismatch, TrainingDiverged
from .model import ModelConfig, darccn_forward
from .nncore import ParamRegistry, Tensor, backward, load_weights, mean_all, no_grad, save_weights, square, sub
from .signal import pack_features, read_wav, stft

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 2e-4
    batch: int = 4
    halve_after: int = 3
    stop_after: int = 5
    max_epochs: int = 100
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise InvalidArgument("lr must be positive")
        if self.batch < 1:
            raise InvalidArgument("batch must be >= 1")
        if not 0 < self.halve_after < self.stop_after:
            raise InvalidArgument("need 0 < halve_after < stop_after")


@dataclass(frozen=True)
class ScheduleState:
    best_val: float = math.inf
    bad_streak: int = 0
    lr: float = 2e-4
    stopped: bool = False


def schedule_update(s: ScheduleState, val_loss: float, halve_after: int = 3, stop_after: int = 5) -> ScheduleState:
    if math.isnan(val_loss):
        raise TrainingDiverged("validation loss is NaN")
    if val_loss < s.best_val:
        return replace(s, best_val=val_loss, bad_streak=0)
    streak = s.bad_streak + 1
    lr = s.lr / 2 if streak == halve_after else s.lr
    return replace(s, bad_streak=streak, lr=lr, stopped=s.stopped or streak >= stop_after)


def multistage_mse(estimates: list[Tensor], target) -> Tensor:
    """Mean over stages of the per-stage mean squared error."""
    target = target if isinstance(target, Tensor) else Tensor(np.asarray(target))
    if not estimates:
        raise InvalidArgument("no stage estimates")
    total = None
    for est in estimates:
        if est.shape != target.shape:
            raise ShapeMismatch(f"estimate {est.shape} vs target {target.shape}")
        term = mean_all(square(sub(est, target)))
        total = term if total is None else total + term
    return total * (1.0 / len(estimates))


class Adam:
    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: ParamRegistry, lr: float) -> None:
        """Apply one bias-corrected update from the gradients stored on ``params``."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name, p in params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict[str, np.ndarray]:
        out = {"t": np.array([self.t], dtype=np.float64)}
        for k in self.m:
            out[f"m.{k}"] = self.m[k]
            out[f"v.{k}"] = self.v[k]
        return out

    def load(self, state: dict[str, np.ndarray], dtype=np.float64) -> None:
        self.t = int(state["t"][0])
        self.m = {k[2:]: np.array(v, dtype=dtype) for k, v in state.items() if k.startswith("m.")}
        self.v = {k[2:]: np.array(v, dtype=dtype) for k, v in state.items() if k.startswith("v.")}


def optimizer_step(params: ParamRegistry, opt: Adam, lr: float) -> None:
    opt.step(params, lr)


Pair = tuple[np.ndarray, np.ndarray]  # (noisy features, clean features), each 2 x F x bins


def features_for(x: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    return pack_features(stft(x, cfg.stft_config()))


def load_pairs(root, cfg: ModelConfig) -> list[Pair]:
    pairs = []
    for noisy, clean in list_pairs(root):
        pairs.append((features_for(read_wav(noisy), cfg), features_for(read_wav(clean), cfg)))
    if not pairs:
        raise InvalidArgument(f"no noisy/clean WAV pairs under {root}")
    return pairs


def _stack(pairs: list[Pair], dtype) -> tuple[np.ndarray, np.ndarray]:
    shapes = {p[0].shape for p in pairs}
    if len(shapes) != 1:
        raise ShapeMismatch(f"utterances in a minibatch must share a length, got {sorted(shapes)}")
    return (np.stack([p[0] for p in pairs]).astype(dtype), np.stack([p[1] for p in pairs]).astype(dtype))


class Trainer:
    """Owns the parameters, optimizer and schedule for one training run."""

    def __init__(self, params: ParamRegistry, cfg: ModelConfig, tcfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.tcfg = tcfg
        self.opt = Adam()
        self.sched = ScheduleState(lr=tcfg.lr)
        self.rng = np.random.default_rng(tcfg.seed)
        self.epoch = 0
        self.history: list[tuple[int, float, float, float]] = []

    def step(self, batch: list[Pair], lr: float | None = None) -> float:
        X, S = _stack(batch, self.params.dtype)
        self.params.zero_grad()
        loss = multistage_mse(darccn_forward(Tensor(X), self.params, self.cfg, training=True), S)
        value = float(loss.data)
        if not math.isfinite(value):
            raise TrainingDiverged(f"training loss became {value} at epoch {self.epoch}")
        backward(loss)
        self.opt.step(self.params, self.sched.lr if lr is None else lr)
        return value

    def evaluate(self, pairs: list[Pair]) -> float:
        with no_grad():
            losses = []
            for i in range(0, len(pairs), self.tcfg.batch):
                X, S = _stack(pairs[i : i + self.tcfg.batch], self.params.dtype)
                est = darccn_forward(Tensor(X), self.params, self.cfg, training=False)
                losses.append((float(multistage_mse(est, S).data), len(X)))
        return sum(l * n for l, n in losses) / sum(n for _, n in losses)

    def run_epoch(self, train: list[Pair]) -> float:
        order = self.rng.permutation(len(train))
        losses = []
        for i in range(0, len(order), self.tcfg.batch):
            losses.append(self.step([train[j] for j in order[i : i + self.tcfg.batch]]))
        return float(np.mean(losses))

    # checkpoints -------------------------------------------------------
    def save_checkpoint(self, stem) -> None:
        stem = Path(stem)
        save_weights(stem.with_suffix(".bin"), self.params.state(), self.cfg.to_counts())
        save_weights(stem.with_suffix(".optim.bin"), self.opt.state())
        meta = {
            "epoch": self.epoch,
            "lr": repr(self.sched.lr),
            "best_val": repr(self.sched.best_val),
            "bad_streak": self.sched.bad_streak,
            "stopped": int(self.sched.stopped),
            "rng_state": json.dumps(self.rng.bit_generator.state),
        }
        _atomic_write(stem.with_suffix(".txt"), "".join(f"{k}={v}\n" for k, v in meta.items()))

    def load_checkpoint(self, stem) -> None:
        stem = Path(stem)
        tensors, _ = load_weights(stem.with_suffix(".bin"))
        self.params.load_state(tensors)
        opt_state, _ = load_weights(stem.with_suffix(".optim.bin"))
        self.opt.load(opt_state, self.params.dtype)
        meta = dict(line.split("=", 1) for line in stem.with_suffix(".txt").read_text().splitlines() if line)
        self.epoch = int(meta["epoch"])
        self.sched = ScheduleState(float(meta["best_val"]), int(meta["bad_streak"]), float(meta["lr"]), bool(int(meta["stopped"])))
        self.rng.bit_generator.state = json.loads(meta["rng_state"])


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    with os.fdopen(fd, "w") as f:
        f.write(text)
    os.replace(tmp, path)


def write_history(path, history) -> None:
    lines = ["epoch,train_loss,val_loss,lr"]
    lines += [f"{e},{tr!r},{va!r},{lr!r}" for e, tr, va, lr in history]
    _atomic_write(Path(path), "\n".join(lines) + "\n")


def train(train_pairs: list[Pair], val_pairs: list[Pair], params: ParamRegistry, cfg: ModelConfig,
          tcfg: TrainConfig, out_dir, resume: bool = False) -> Trainer:
    """Epoch loop with per-epoch validation, schedule, best checkpoint and history.

    Writes ``best.*`` whenever validation improves, ``last.*`` every epoch and
    ``history.csv``.
    """
    if not train_pairs or not val_pairs:
        raise InvalidArgument("training and validation sets must be non-empty")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tr = Trainer(params, cfg, tcfg)
    if resume and (out / "last.txt").exists():
        tr.load_checkpoint(out / "last")
        tr.history = _read_history(out / "history.csv")
    while tr.epoch < tcfg.max_epochs and not tr.sched.stopped:
        train_loss = tr.run_epoch(train_pairs)
        val_loss = tr.evaluate(val_pairs)
        lr_used = tr.sched.lr
        improved = val_loss < tr.sched.best_val
        tr.sched = schedule_update(tr.sched, val_loss, tcfg.halve_after, tcfg.stop_after)
        tr.epoch += 1
        tr.history.append((tr.epoch, train_loss, val_loss, lr_used))
        log.info("epoch %d train %.6g val %.6g lr %.3g", tr.epoch, train_loss, val_loss, lr_used)
        if improved:
            tr.save_checkpoint(out / "best")
        tr.save_checkpoint(out / "last")
        write_history(out / "history.csv", tr.history)
    return tr


def _read_history(path: Path) -> list[tuple[int, float, float, float]]:
    if not path.exists():
        return []
    rows = []
    for line in path.read_text().splitlines()[1:]:
        e, a, b, c = line.split(",")
        rows.append((int(e), float(a), float(b), float(c)))
    return rows
