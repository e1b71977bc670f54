"""Short-time analysis/synthesis and the waveform <-> feature boundary.

Waveforms are 1-D float arrays at 16 kHz. The default analysis is a 20 ms
(320 sample) symmetric Hamming window, 10 ms hop and a 320-point FFT, giving
161 one-sided bins per frame. Synthesis is weighted overlap-add normalised by
the accumulated squared window, so the window need not satisfy COLA.
"""
from __future__ import annotations

import wave
from dataclasses import dataclass, field

import numpy as np

from .errors import AudioFormatError, InvalidArgument, NumericalDegenerate, ShapeMismatch

SAMPLE_RATE = 16000


def make_hamming(win_len: int) -> np.ndarray:
    """Symmetric Hamming window, ``0.54 - 0.46 cos(2 pi n / (N - 1))``."""
    if win_len < 2:
        raise InvalidArgument(f"window length must be >= 2, got {win_len}")
    n = np.arange(win_len)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * n / (win_len - 1))


@dataclass(frozen=True)
class StftConfig:
    win_len: int = 320
    hop: int = 160
    fft_size: int = 320
    window: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.window is None:
            object.__setattr__(self, "window", make_hamming(self.win_len))
        if self.hop * 2 != self.win_len:
            raise InvalidArgument("hop must be half the window (50% overlap)")
        if self.fft_size < self.win_len:
            raise InvalidArgument("fft_size must be >= win_len")
        if len(self.window) != self.win_len or np.any(self.window <= 0):
            raise InvalidArgument("window must have win_len strictly positive weights")

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1

    @classmethod
    def for_fft(cls, fft_size: int) -> "StftConfig":
        return cls(win_len=fft_size, hop=fft_size // 2, fft_size=fft_size)


@dataclass
class ComplexSpectrogram:
    real: np.ndarray  # frames x bins
    imag: np.ndarray

    def __post_init__(self):
        if self.real.shape != self.imag.shape or self.real.ndim != 2:
            raise ShapeMismatch(f"real {self.real.shape} and imag {self.imag.shape} must be equal 2-D")

    @property
    def num_frames(self) -> int:
        return self.real.shape[0]

    @property
    def num_bins(self) -> int:
        return self.real.shape[1]

    @classmethod
    def from_complex(cls, z: np.ndarray) -> "ComplexSpectrogram":
        return cls(np.ascontiguousarray(z.real), np.ascontiguousarray(z.imag))

    def to_complex(self) -> np.ndarray:
        return self.real + 1j * self.imag


def num_frames(length: int, cfg: StftConfig) -> int:
    return 1 + (length - cfg.win_len) // cfg.hop


def frame_signal(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    nf = num_frames(len(x), cfg)
    idx = np.arange(cfg.win_len)[None, :] + cfg.hop * np.arange(nf)[:, None]
    return x[idx]


def stft(x: np.ndarray, cfg: StftConfig | None = None) -> ComplexSpectrogram:
    """Frames start at sample 0 with no padding; trailing partial frames are dropped."""
    cfg = cfg or StftConfig()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidArgument("stft expects a mono 1-D signal")
    if len(x) < cfg.win_len:
        raise InvalidArgument(f"signal of {len(x)} samples is shorter than one window ({cfg.win_len})")
    if not np.all(np.isfinite(x)):
        raise InvalidArgument("signal contains NaN or Inf")
    frames = frame_signal(x, cfg) * cfg.window
    return ComplexSpectrogram.from_complex(np.fft.rfft(frames, n=cfg.fft_size, axis=1))


def synthesis_frames(spec: ComplexSpectrogram, cfg: StftConfig) -> np.ndarray:
    """Windowed inverse frames, ``window * irfft(frame)``."""
    frames = np.fft.irfft(spec.to_complex(), n=cfg.fft_size, axis=1)[:, : cfg.win_len]
    return frames * cfg.window


def istft(spec: ComplexSpectrogram, cfg: StftConfig | None = None, out_len: int | None = None) -> np.ndarray:
    cfg = cfg or StftConfig()
    if spec.num_bins != cfg.num_bins:
        raise ShapeMismatch(f"spectrogram has {spec.num_bins} bins, config expects {cfg.num_bins}")
    nf = spec.num_frames
    total = (nf - 1) * cfg.hop + cfg.win_len if nf else 0
    out_len = total if out_len is None else out_len
    frames = synthesis_frames(spec, cfg)
    num = np.zeros(total)
    den = np.zeros(total)
    w2 = cfg.window**2
    for t in range(nf):
        s = t * cfg.hop
        num[s : s + cfg.win_len] += frames[t]
        den[s : s + cfg.win_len] += w2
    if total and den.min() < 1e-8:
        raise NumericalDegenerate("accumulated window energy below 1e-8")
    y = num / den if total else num
    if out_len <= total:
        return y[:out_len]
    return np.concatenate([y, np.zeros(out_len - total)])


def pack_features(spec: ComplexSpectrogram) -> np.ndarray:
    """Stack real and imaginary planes on a leading channel axis: 2 x frames x bins."""
    return np.stack([spec.real, spec.imag], axis=0)


def unpack_features(t: np.ndarray) -> ComplexSpectrogram:
    t = np.asarray(t)
    if t.ndim != 3 or t.shape[0] != 2:
        raise ShapeMismatch(f"feature tensor must be 2 x frames x bins, got {t.shape}")
    return ComplexSpectrogram(t[0].copy(), t[1].copy())


def read_wav(path) -> np.ndarray:
    """16-bit PCM mono 16 kHz only; samples scaled by 1/32768."""
    try:
        with wave.open(str(path), "rb") as w:
            if w.getnchannels() != 1:
                raise AudioFormatError(f"{path}: expected mono, got {w.getnchannels()} channels")
            if w.getsampwidth() != 2:
                raise AudioFormatError(f"{path}: expected 16-bit PCM, got {8 * w.getsampwidth()}-bit")
            if w.getframerate() != SAMPLE_RATE:
                raise AudioFormatError(f"{path}: expected {SAMPLE_RATE} Hz, got {w.getframerate()} Hz")
            raw = w.readframes(w.getnframes())
    except (OSError, EOFError, wave.Error) as e:
        raise AudioFormatError(f"cannot read WAV {path}: {e}") from e
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0


def write_wav(path, x: np.ndarray) -> None:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise InvalidArgument("refusing to write non-finite samples")
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    try:
        with wave.open(str(path), "wb") as w:
            w.setnchannels(1)
            w.setsampwidth(2)
            w.setframerate(SAMPLE_RATE)
            w.writeframes(pcm.tobytes())
    except OSError as e:
        raise AudioFormatError(f"cannot write WAV {path}: {e}") from e
