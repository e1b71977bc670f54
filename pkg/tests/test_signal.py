import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.signal import windows

from darccn.errors import AudioFormatError, InvalidArgument, ShapeMismatch
from darccn.signal import (
    ComplexSpectrogram,
    StftConfig,
    istft,
    make_hamming,
    num_frames,
    pack_features,
    read_wav,
    stft,
    unpack_features,
    write_wav,
)

CFG = StftConfig()


def reference_stft(x, win_len=320, hop=160):
    """Explicit loop + full complex FFT, keeping the first half + 1 bins."""
    w = windows.hamming(win_len, sym=True)
    frames = []
    start = 0
    while start + win_len <= len(x):
        frames.append(np.fft.fft(x[start : start + win_len] * w)[: win_len // 2 + 1])
        start += hop
    return np.array(frames)


def interior_rel_err(x, y, win=320):
    a, b = x[win:-win], y[win:-win]
    return np.linalg.norm(a - b) / np.linalg.norm(a)


def test_hamming_endpoints():
    w = make_hamming(320)
    assert w[0] == pytest.approx(0.08, abs=1e-15)
    assert w[-1] == pytest.approx(0.08, abs=1e-15)
    assert make_hamming(321)[160] == pytest.approx(1.0, abs=1e-15)


def test_hamming_matches_independent_table():
    w = make_hamming(320)
    ref = windows.hamming(320, sym=True)
    assert w[160] == pytest.approx(ref[160], abs=1e-15)
    np.testing.assert_allclose(w, ref, atol=1e-15)


def test_hamming_rejects_short():
    with pytest.raises(InvalidArgument):
        make_hamming(1)


def test_stft_one_second_shape():
    s = stft(np.random.default_rng(0).standard_normal(16000))
    assert (s.num_frames, s.num_bins) == (99, 161)


def test_stft_matches_reference_loop(rng):
    x = rng.standard_normal(4000)
    s = stft(x)
    np.testing.assert_allclose(s.to_complex(), reference_stft(x), atol=1e-10)


def test_stft_zero_input():
    s = stft(np.zeros(1000))
    assert not s.real.any() and not s.imag.any()


def test_stft_dc_bin():
    c = 0.37
    s = stft(np.full(2000, c))
    expected = sum(c * w for w in windows.hamming(320, sym=True))
    np.testing.assert_allclose(s.real[:, 0], expected, rtol=1e-12)
    np.testing.assert_allclose(s.imag[:, 0], 0.0, atol=1e-12)


def test_stft_rejects_short_signal():
    with pytest.raises(InvalidArgument):
        stft(np.zeros(319))


@given(st.integers(min_value=320, max_value=10**6))
def test_frame_count_formula(n):
    assert num_frames(n, CFG) == 1 + (n - 320) // 160


@pytest.mark.parametrize("n", [320, 479, 480, 16000, 16159])
def test_frame_count_matches_stft(n):
    assert stft(np.ones(n)).num_frames == 1 + (n - 320) // 160


def test_round_trip_random(rng):
    x = rng.standard_normal(16000)
    y = istft(stft(x), out_len=len(x))
    assert interior_rel_err(x, y) < 1e-6


def test_round_trip_sine():
    t = np.arange(16000) / 16000
    x = np.sin(2 * np.pi * 440 * t)
    assert interior_rel_err(x, istft(stft(x), out_len=len(x))) < 1e-6


def test_istft_zero():
    z = ComplexSpectrogram(np.zeros((10, 161)), np.zeros((10, 161)))
    assert not istft(z, out_len=1760).any()


def test_istft_pads_and_truncates(rng):
    x = rng.standard_normal(1000)
    s = stft(x)
    assert len(istft(s, out_len=2000)) == 2000
    assert len(istft(s, out_len=500)) == 500


@given(st.integers(min_value=960, max_value=6000), st.integers(0, 2**31))
def test_round_trip_property(n, seed):
    x = np.random.default_rng(seed).standard_normal(n)
    y = istft(stft(x), out_len=n)
    covered = 320 + (num_frames(n, CFG) - 1) * 160
    # every covered sample is recovered, not just the interior
    np.testing.assert_allclose(y[:covered], x[:covered], atol=1e-9)


@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31))
def test_stft_linearity(a, b, seed):
    r = np.random.default_rng(seed)
    x, y = r.standard_normal(1200), r.standard_normal(1200)
    lhs = stft(a * x + b * y).to_complex()
    rhs = a * stft(x).to_complex() + b * stft(y).to_complex()
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_pack_shapes_and_planes():
    s = ComplexSpectrogram(np.ones((7, 161)), np.full((7, 161), 2.0))
    t = pack_features(s)
    assert t.shape == (2, 7, 161)
    assert (t[0] == 1).all() and (t[1] == 2).all()
    z = pack_features(ComplexSpectrogram(np.zeros((3, 161)), np.zeros((3, 161))))
    assert z.shape == (2, 3, 161) and not z.any()


def test_pack_unpack_exact(rng):
    s = ComplexSpectrogram(rng.standard_normal((5, 161)), rng.standard_normal((5, 161)))
    u = unpack_features(pack_features(s))
    assert np.array_equal(u.real, s.real) and np.array_equal(u.imag, s.imag)


def test_unpack_rejects_wrong_channels():
    with pytest.raises(ShapeMismatch):
        unpack_features(np.zeros((3, 4, 161)))


def test_wav_round_trip(tmp_path, rng):
    x = np.clip(rng.standard_normal(1000) * 0.2, -1, 1)
    write_wav(tmp_path / "a.wav", x)
    y = read_wav(tmp_path / "a.wav")
    assert len(y) == 1000
    np.testing.assert_allclose(x, y, atol=1 / 32768)


def test_wav_rejects_other_rates(tmp_path):
    import wave

    with wave.open(str(tmp_path / "b.wav"), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(8000)
        w.writeframes(b"\x00\x00" * 10)
    with pytest.raises(AudioFormatError, match="16000"):
        read_wav(tmp_path / "b.wav")


def test_wav_rejects_stereo(tmp_path):
    import wave

    with wave.open(str(tmp_path / "c.wav"), "wb") as w:
        w.setnchannels(2)
        w.setsampwidth(2)
        w.setframerate(16000)
        w.writeframes(b"\x00\x00" * 20)
    with pytest.raises(AudioFormatError, match="mono"):
        read_wav(tmp_path / "c.wav")


def test_missing_wav(tmp_path):
    with pytest.raises(AudioFormatError):
        read_wav(tmp_path / "nope.wav")
