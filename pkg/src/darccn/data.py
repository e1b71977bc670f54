"""Noisy/clean pair synthesis.

Clips are fixed to 8 s (random crop if longer, cyclic tiling if shorter) and
mixed at an SNR drawn from the 0..40 dB grid in 2 dB steps. SNR is measured on
full-clip RMS. Every manifest row gets its own RNG stream derived from
``(seed, row_index)``, so parallel processing produces identical files.
"""
from __future__ import annotations

import csv
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DarccnError, DegenerateInput, InvalidArgument
from .signal import SAMPLE_RATE, read_wav, write_wav

log = logging.getLogger(__name__)

SNR_GRID = tuple(range(0, 41, 2))
CLIP_SECONDS = 8.0
MANIFEST_HEADER = ["clean", "noise", "snr_db", "out_noisy", "out_clean"]
PEAK_LIMIT = 0.999


@dataclass(frozen=True)
class MixSpec:
    snr_db: float
    clip_len: float = CLIP_SECONDS
    seed: int = 0

    def __post_init__(self):
        if self.snr_db not in SNR_GRID:
            raise InvalidArgument(f"SNR {self.snr_db} dB is not on the 0..40 dB / 2 dB grid")
        if self.clip_len <= 0:
            raise InvalidArgument("clip_len must be positive")


@dataclass(frozen=True)
class ManifestRow:
    clean: str
    noise: str
    snr_db: float
    out_noisy: str
    out_clean: str


def rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(x, dtype=np.float64))))


def fix_length(x: np.ndarray, clip_len: float = CLIP_SECONDS, rng: np.random.Generator | int | None = None) -> np.ndarray:
    n = int(round(clip_len * SAMPLE_RATE))
    x = np.asarray(x, dtype=np.float64)
    if len(x) == 0:
        raise InvalidArgument("cannot fix the length of an empty clip")
    if len(x) > n:
        rng = np.random.default_rng(rng)
        start = int(rng.integers(0, len(x) - n + 1))
        return x[start : start + n].copy()
    return np.resize(x, n)


def mix_pair(clean: np.ndarray, noise: np.ndarray, snr_db: float) -> tuple[np.ndarray, np.ndarray]:
    """Scale ``noise`` to ``snr_db`` below ``clean`` and add; returns (noisy, clean).

    If the mixture would peak above 0.999, both outputs are scaled down by the
    same factor so the pair stays consistent.
    """
    clean = np.asarray(clean, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if clean.shape != noise.shape:
        raise InvalidArgument(f"clean {clean.shape} and noise {noise.shape} lengths differ")
    rc, rn = rms(clean), rms(noise)
    if rc == 0.0:
        raise DegenerateInput("clean signal is silent")
    if rn == 0.0:
        raise DegenerateInput("noise signal is silent")
    g = rc / rn * 10.0 ** (-snr_db / 20.0)
    noisy = clean + g * noise
    peak = float(np.max(np.abs(noisy)))
    if peak > PEAK_LIMIT:
        k = PEAK_LIMIT / peak
        noisy = noisy * k
        clean = clean * k
    return noisy, clean


def read_manifest(path) -> list[ManifestRow]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != MANIFEST_HEADER:
            raise InvalidArgument(f"manifest header must be {','.join(MANIFEST_HEADER)!r}, got {header}")
        rows = []
        for i, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != 5 or not all(rec):
                raise InvalidArgument(f"manifest line {i}: expected 5 non-empty fields")
            snr = float(rec[2])
            if snr not in SNR_GRID:
                raise InvalidArgument(f"manifest line {i}: SNR {snr} not on the 2 dB grid")
            rows.append(ManifestRow(rec[0], rec[1], snr, rec[3], rec[4]))
    return rows


def write_manifest(path, rows: list[ManifestRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for r in rows:
            snr = int(r.snr_db) if float(r.snr_db).is_integer() else r.snr_db
            w.writerow([r.clean, r.noise, snr, r.out_noisy, r.out_clean])


def split_clean(paths: list[str], val_count: int, seed: int = 0) -> tuple[list[str], list[str]]:
    """Random train/validation split of a clean-file list.

    The original recipe split 65348 clips into 56200 / 9148.
    """
    if not 0 <= val_count <= len(paths):
        raise InvalidArgument("val_count out of range")
    order = np.random.default_rng(seed).permutation(len(paths))
    val = sorted(paths[i] for i in order[:val_count])
    train = sorted(paths[i] for i in order[val_count:])
    return train, val


def plan_manifest(clean: list[str], noise: list[str], count: int, seed: int = 0, prefix: str = "") -> list[ManifestRow]:
    """Pair random clean/noise files with random grid SNRs."""
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(count):
        c = clean[int(rng.integers(len(clean)))]
        n = noise[int(rng.integers(len(noise)))]
        snr = float(SNR_GRID[int(rng.integers(len(SNR_GRID)))])
        rows.append(ManifestRow(c, n, snr, f"{prefix}noisy/{i:06d}.wav", f"{prefix}clean/{i:06d}.wav"))
    return rows


@dataclass
class DatasetReport:
    pairs: int
    seconds: float
    snr_hist: dict[float, int]
    errors: list[tuple[int, str]]

    def summary_line(self) -> str:
        hist = ",".join(f"{k:g}:{v}" for k, v in sorted(self.snr_hist.items()))
        return f"SUMMARY\tpairs={self.pairs}\tseconds={self.seconds:.3f}\terrors={len(self.errors)}\tsnr_hist={hist}"

    def to_text(self) -> str:
        lines = [f"pairs written : {self.pairs}", f"total seconds : {self.seconds:.3f}", "SNR histogram :"]
        lines += [f"  {k:5g} dB : {v}" for k, v in sorted(self.snr_hist.items())]
        for row, msg in self.errors:
            lines.append(f"error row {row}: {msg}")
        lines.append(self.summary_line())
        return "\n".join(lines)


def _resolve(base: Path, p: str) -> Path:
    q = Path(p)
    return q if q.is_absolute() else base / q


def _process_row(i: int, row: ManifestRow, in_base: Path, out_dir: Path, seed: int, clip_len: float) -> float:
    rng = np.random.default_rng([seed, i])
    clean = fix_length(read_wav(_resolve(in_base, row.clean)), clip_len, rng)
    noise = fix_length(read_wav(_resolve(in_base, row.noise)), clip_len, rng)
    noisy, clean = mix_pair(clean, noise, row.snr_db)
    for rel, sig in ((row.out_noisy, noisy), (row.out_clean, clean)):
        dst = _resolve(out_dir, rel)
        dst.parent.mkdir(parents=True, exist_ok=True)
        write_wav(dst, sig)
    return len(noisy) / SAMPLE_RATE


def build_dataset(
    rows: list[ManifestRow],
    out_dir,
    seed: int = 0,
    clip_len: float = CLIP_SECONDS,
    in_base=".",
    workers: int = 1,
) -> DatasetReport:
    """Write every pair; unreadable rows are reported, not fatal."""
    if not rows:
        raise InvalidArgument("empty manifest")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    in_base = Path(in_base)

    def job(i_row):
        i, row = i_row
        try:
            return i, _process_row(i, row, in_base, out_dir, seed, clip_len), None
        except (DarccnError, OSError) as e:
            log.warning("row %d failed: %s", i, e)
            return i, 0.0, str(e)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, enumerate(rows)))
    else:
        results = [job(x) for x in enumerate(rows)]
    ok = [(i, sec) for i, sec, err in results if err is None]
    errors = [(i, err) for i, _, err in results if err is not None]
    hist = Counter(rows[i].snr_db for i, _ in ok)
    return DatasetReport(len(ok), float(sum(s for _, s in ok)), dict(hist), errors)


def list_pairs(root) -> list[tuple[Path, Path]]:
    """(noisy, clean) file pairs under ``root/noisy`` and ``root/clean`` matched by name."""
    root = Path(root)
    noisy = {p.name: p for p in sorted((root / "noisy").glob("*.wav"))}
    clean = {p.name: p for p in sorted((root / "clean").glob("*.wav"))}
    names = sorted(set(noisy) & set(clean))
    return [(noisy[n], clean[n]) for n in names]


def synthetic_speech(seconds: float, seed: int = 0, sr: int = SAMPLE_RATE) -> np.ndarray:
    """Speech-like test signal: gliding harmonic tones with syllable-rate envelopes."""
    rng = np.random.default_rng(seed)
    n = int(seconds * sr)
    t = np.arange(n) / sr
    f0 = 120.0 + 60.0 * rng.random() + 30.0 * np.sin(2 * np.pi * (0.5 + rng.random()) * t)
    phase = 2 * np.pi * np.cumsum(f0) / sr
    x = sum(np.sin(k * phase + rng.uniform(0, 2 * np.pi)) / k for k in range(1, 16))
    syll = 3.0 + 2.0 * rng.random()
    env = np.clip(np.sin(2 * np.pi * syll * t + rng.uniform(0, 2 * np.pi)), 0, None) ** 2
    x = x * env
    return 0.3 * x / (np.max(np.abs(x)) + 1e-12)


def synthetic_noise(seconds: float, seed: int = 0, sr: int = SAMPLE_RATE, color: float = 0.5) -> np.ndarray:
    """Coloured Gaussian noise (1/f^color power slope)."""
    rng = np.random.default_rng(seed)
    n = int(seconds * sr)
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(len(spec), dtype=np.float64)
    f[0] = 1.0
    y = np.fft.irfft(spec / f ** (color / 2.0), n=n)
    return 0.1 * y / (np.std(y) + 1e-12)


def write_synthetic_corpus(root, clean_count: int, noise_count: int, seconds: float = 2.0, seed: int = 0) -> tuple[list[str], list[str]]:
    """Populate ``root/clean_src`` and ``root/noise_src`` with synthetic WAVs; returns relative paths."""
    root = Path(root)
    clean, noise = [], []
    for sub, count, make, out in (("clean_src", clean_count, synthetic_speech, clean),
                                  ("noise_src", noise_count, synthetic_noise, noise)):
        (root / sub).mkdir(parents=True, exist_ok=True)
        for i in range(count):
            rel = f"{sub}/{i:04d}.wav"
            write_wav(root / rel, make(seconds, seed=seed * 7919 + i + (0 if sub == "clean_src" else 100003)))
            out.append(rel)
    return clean, noise
