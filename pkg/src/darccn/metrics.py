"""Objective metrics (STOI, SI-SDR, SNR) and the per-frame latency benchmark."""
from __future__ import annotations

import os
import platform
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import resample_poly

from .data import rms, synthetic_noise, synthetic_speech
from .errors import InvalidArgument
from .model import ModelConfig, StreamingEnhancer
from .nncore import ParamRegistry

# STOI constants (Taal et al. 2011 definition)
STOI_FS = 10000
STOI_FRAME = 256
STOI_NFFT = 512
STOI_BANDS = 15
STOI_MIN_FREQ = 150.0
STOI_SEGMENT = 30
STOI_BETA = -15.0
STOI_DYN_RANGE = 40.0
_EPS = np.finfo(np.float64).eps

SI_SDR_CAP = 100.0


def third_octave_matrix(fs: int = STOI_FS, nfft: int = STOI_NFFT, bands: int = STOI_BANDS,
                        min_freq: float = STOI_MIN_FREQ) -> np.ndarray:
    """0/1 matrix (bands x nfft/2+1) grouping FFT bins into one-third octave bands."""
    f = np.linspace(0, fs, nfft + 1)[: nfft // 2 + 1]
    k = np.arange(bands)
    lo = min_freq * 2.0 ** ((2 * k - 1) / 6)
    hi = min_freq * 2.0 ** ((2 * k + 1) / 6)
    obm = np.zeros((bands, len(f)))
    for i in range(bands):
        a = int(np.argmin((f - lo[i]) ** 2))
        b = int(np.argmin((f - hi[i]) ** 2))
        obm[i, a:b] = 1.0
    return obm


def _resample(x: np.ndarray, up: int, down: int) -> np.ndarray:
    """Polyphase resampling with the Kaiser low-pass that MATLAB/Octave ``resample``
    designs by default, so scores match the reference implementation."""
    g = int(np.gcd(up, down))
    p, q = up // g, down // g
    cutoff = 1.0 / (2 * max(p, q))
    rejection_db = 60.0
    half = int(np.ceil((rejection_db - 8) / (28.714 * cutoff / 10)))
    t = np.arange(-half, half + 1)
    beta = 0.1102 * (rejection_db - 8.7)
    h = np.kaiser(2 * half + 1, beta) * 2 * p * cutoff * np.sinc(2 * cutoff * t)
    return resample_poly(x, p, q, window=h / h.sum())


def _stoi_window() -> np.ndarray:
    return np.hanning(STOI_FRAME + 2)[1:-1]


def _frames(x: np.ndarray, hop: int) -> np.ndarray:
    # frame starts 0, hop, ... strictly below len(x) - frame, as in the reference code
    n = max(0, -(-(len(x) - STOI_FRAME) // hop))
    idx = np.arange(STOI_FRAME)[None, :] + hop * np.arange(n)[:, None]
    return x[idx]


def remove_silent_frames(x: np.ndarray, y: np.ndarray, dyn_range: float = STOI_DYN_RANGE) -> tuple[np.ndarray, np.ndarray]:
    """Drop frames whose clean energy is more than ``dyn_range`` dB below the loudest."""
    hop = STOI_FRAME // 2
    w = _stoi_window()
    xf = _frames(x, hop) * w
    yf = _frames(y, hop) * w
    energy = 20 * np.log10(np.linalg.norm(xf, axis=1) + _EPS)
    keep = energy > energy.max() - dyn_range
    xf, yf = xf[keep], yf[keep]
    n = len(xf)
    out_len = (n - 1) * hop + STOI_FRAME if n else 0
    xs, ys = np.zeros(out_len), np.zeros(out_len)
    for i in range(n):
        xs[i * hop : i * hop + STOI_FRAME] += xf[i]
        ys[i * hop : i * hop + STOI_FRAME] += yf[i]
    return xs, ys


def _band_envelopes(x: np.ndarray, obm: np.ndarray) -> np.ndarray:
    spec = np.fft.rfft(_frames(x, STOI_FRAME // 2) * _stoi_window(), n=STOI_NFFT, axis=1)
    return np.sqrt(obm @ (np.abs(spec) ** 2).T)  # bands x frames


def stoi(clean: np.ndarray, degraded: np.ndarray, fs: int = 16000) -> float:
    """Short-time objective intelligibility in [0, 1] (clamped).

    Both signals are resampled to 10 kHz, silent frames (per the clean
    signal) are removed, and clipped one-third-octave envelope correlations
    over 30-frame (384 ms) segments are averaged.
    """
    x = np.asarray(clean, dtype=np.float64)
    y = np.asarray(degraded, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise InvalidArgument("stoi needs two 1-D signals of equal length")
    if fs != STOI_FS:
        x = _resample(x, STOI_FS, fs)
        y = _resample(y, STOI_FS, fs)
    if len(x) < STOI_FRAME:
        raise InvalidArgument("signal too short for STOI")
    x, y = remove_silent_frames(x, y)
    obm = third_octave_matrix()
    if len(x) < STOI_FRAME:
        raise InvalidArgument("signal has no non-silent frames")
    X = _band_envelopes(x, obm)
    Y = _band_envelopes(y, obm)
    if X.shape[1] < STOI_SEGMENT:
        raise InvalidArgument(f"need at least {STOI_SEGMENT} non-silent frames for STOI, got {X.shape[1]}")
    d = stoi_from_envelopes(X, Y)
    return float(np.clip(d, 0.0, 1.0))


def stoi_from_envelopes(X: np.ndarray, Y: np.ndarray) -> float:
    """Unclamped mean clipped correlation over all segments and bands."""
    n = STOI_SEGMENT
    clip = 10.0 ** (-STOI_BETA / 20.0)
    segs = X.shape[1] - n + 1
    xs = np.stack([X[:, m : m + n] for m in range(segs)])  # segs x bands x n
    ys = np.stack([Y[:, m : m + n] for m in range(segs)])
    alpha = np.linalg.norm(xs, axis=2, keepdims=True) / (np.linalg.norm(ys, axis=2, keepdims=True) + _EPS)
    yp = np.minimum(ys * alpha, xs * (1.0 + clip))
    xc = xs - xs.mean(axis=2, keepdims=True)
    yc = yp - yp.mean(axis=2, keepdims=True)
    xc /= np.linalg.norm(xc, axis=2, keepdims=True) + _EPS
    yc /= np.linalg.norm(yc, axis=2, keepdims=True) + _EPS
    return float(np.sum(xc * yc) / (segs * X.shape[0]))


def si_sdr(reference: np.ndarray, estimate: np.ndarray) -> float:
    """Scale-invariant SDR in dB, capped at 100 dB for an exact (scaled) match."""
    s = np.asarray(reference, dtype=np.float64)
    e = np.asarray(estimate, dtype=np.float64)
    if s.shape != e.shape:
        raise InvalidArgument("reference and estimate lengths differ")
    ss = float(np.dot(s, s))
    if ss == 0.0:
        raise InvalidArgument("reference is silent")
    alpha = float(np.dot(e, s)) / ss
    target = alpha * s
    resid = target - e
    num = float(np.dot(target, target))
    den = float(np.dot(resid, resid))
    if den <= num * 10.0 ** (-SI_SDR_CAP / 10.0):
        return SI_SDR_CAP
    return min(SI_SDR_CAP, 10.0 * np.log10(num / den))


def measure_snr(clean: np.ndarray, noise_component: np.ndarray) -> float:
    """20 log10 of the RMS ratio; +inf for a silent noise component."""
    rn = rms(noise_component)
    if rn == 0.0:
        return float("inf")
    return 20.0 * np.log10(rms(clean) / rn)


@dataclass
class EvalReport:
    rows: list[tuple[str, float, float, float]] = field(default_factory=list)  # id, stoi, si_sdr, snr

    def add(self, uid: str, clean: np.ndarray, enhanced: np.ndarray) -> None:
        n = min(len(clean), len(enhanced))
        c, e = clean[:n], enhanced[:n]
        snr = min(SI_SDR_CAP, measure_snr(c, e - c))
        self.rows.append((uid, stoi(c, e), si_sdr(c, e), snr))

    def means(self) -> tuple[float, float, float]:
        a = np.array([r[1:] for r in self.rows], dtype=np.float64)
        return tuple(float(v) for v in a.mean(axis=0))

    def to_csv(self) -> str:
        lines = ["id,stoi,si_sdr_db,snr_db"] + [f"{u},{a:.6f},{b:.4f},{c:.4f}" for u, a, b, c in self.rows]
        m = self.means()
        lines.append(f"MEAN,{m[0]:.6f},{m[1]:.4f},{m[2]:.4f}")
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        w = max([len(r[0]) for r in self.rows] + [4])
        lines = [f"{'id':<{w}}  {'stoi':>8}  {'si_sdr':>8}  {'snr':>8}"]
        lines += [f"{u:<{w}}  {a:8.4f}  {b:8.2f}  {c:8.2f}" for u, a, b, c in self.rows]
        m = self.means()
        lines.append(f"{'mean':<{w}}  {m[0]:8.4f}  {m[1]:8.2f}  {m[2]:8.2f}")
        return "\n".join(lines)


def hardware_descriptor() -> str:
    model = platform.processor() or platform.machine()
    try:
        with open("/proc/cpuinfo") as f:
            for line in f:
                if line.startswith("model name"):
                    model = line.split(":", 1)[1].strip()
                    break
    except OSError:
        pass
    return f"{model}; {os.cpu_count()} logical cpus; {platform.system()} {platform.release()}; numpy {np.__version__}"


@dataclass
class LatencyReport:
    mean_ms: float
    p50_ms: float
    p95_ms: float
    p99_ms: float
    trial_means_ms: list[float]
    trials: int
    utterances: int
    frames_per_trial: int
    hardware: str
    note: str = "per-frame time covers analysis window + FFT, all stages of the network, inverse FFT and overlap-add"

    def to_text(self) -> str:
        lines = [
            f"hardware        : {self.hardware}",
            f"trials          : {self.trials}",
            f"utterances      : {self.utterances}",
            f"frames / trial  : {self.frames_per_trial}",
            f"mean  (ms/frame): {self.mean_ms:.4f}",
            f"p50   (ms/frame): {self.p50_ms:.4f}",
            f"p95   (ms/frame): {self.p95_ms:.4f}",
            f"p99   (ms/frame): {self.p99_ms:.4f}",
            "trial means (ms): " + ", ".join(f"{t:.4f}" for t in self.trial_means_ms),
            f"note            : {self.note}",
        ]
        return "\n".join(lines)

    def to_csv(self) -> str:
        head = "trials,utterances,frames_per_trial,mean_ms,p50_ms,p95_ms,p99_ms,hardware"
        row = (f"{self.trials},{self.utterances},{self.frames_per_trial},{self.mean_ms:.6f},"
               f"{self.p50_ms:.6f},{self.p95_ms:.6f},{self.p99_ms:.6f},\"{self.hardware}\"")
        return head + "\n" + row + "\n"


class _PassThrough(StreamingEnhancer):
    """Session with the network removed; measures harness cost only."""

    def enhance_frame(self, frame):
        return np.asarray(frame, dtype=np.float64) * self.scfg.window**2


class _single_thread:
    def __enter__(self):
        self._limits = None
        self._affinity = None
        try:
            from threadpoolctl import threadpool_limits

            self._limits = threadpool_limits(1)
        except ImportError:
            pass
        if hasattr(os, "sched_getaffinity"):
            self._affinity = os.sched_getaffinity(0)
            os.sched_setaffinity(0, {min(self._affinity)})
        return self

    def __exit__(self, *exc):
        if self._affinity is not None:
            os.sched_setaffinity(0, self._affinity)
        if self._limits is not None:
            self._limits.unregister()
        return False


def bench_latency(params: ParamRegistry | None, cfg: ModelConfig, utterances: int = 500, trials: int = 5,
                  seconds: float = 1.0, seed: int = 0, inputs: list[np.ndarray] | None = None) -> LatencyReport:
    """Stream utterances frame by frame and time every frame.

    Each trial processes ``utterances`` clips (synthetic noisy speech unless
    ``inputs`` is given); the per-frame mean of each trial is recorded and the
    report aggregates over trials. ``params=None`` benchmarks the harness alone.
    """
    if utterances < 1 or trials < 1:
        raise InvalidArgument("utterances and trials must be >= 1")
    session = _PassThrough(params, cfg) if params is None else StreamingEnhancer(params, cfg)
    scfg = session.scfg
    rng = np.random.default_rng(seed)
    all_times: list[float] = []
    trial_means = []
    frames_per_trial = 0
    with _single_thread():
        for _ in range(trials):
            times = []
            for _ in range(utterances):
                if inputs is not None:
                    x = inputs[int(rng.integers(len(inputs)))]
                else:
                    s = int(rng.integers(1 << 31))
                    x = synthetic_speech(seconds, seed=s) + synthetic_noise(seconds, seed=s + 1)
                session.reset()
                nf = 1 + (len(x) - scfg.win_len) // scfg.hop
                for t in range(nf):
                    frame = x[t * scfg.hop : t * scfg.hop + scfg.win_len]
                    t0 = time.perf_counter()
                    session.process_frame(t, frame)
                    times.append(time.perf_counter() - t0)
            frames_per_trial = len(times)
            trial_means.append(1e3 * float(np.mean(times)))
            all_times.extend(times)
    ms = 1e3 * np.asarray(all_times)
    return LatencyReport(
        mean_ms=float(np.mean(trial_means)),
        p50_ms=float(np.percentile(ms, 50)),
        p95_ms=float(np.percentile(ms, 95)),
        p99_ms=float(np.percentile(ms, 99)),
        trial_means_ms=trial_means,
        trials=trials,
        utterances=utterances,
        frames_per_trial=frames_per_trial,
        hardware=hardware_descriptor(),
    )
