import math

import numpy as np
import pytest

from ewer.errors import EmptySignal, IoFailure, UnsupportedFormat
from ewer.features import signal as sig


def tone(seconds, rate=8000, freq=440.0, amp=0.3, seed=0):
    t = np.arange(int(seconds * rate)) / rate
    noise = np.random.default_rng(seed).normal(scale=0.01, size=t.size)
    return amp * np.sin(2 * np.pi * freq * t) + noise


def naive_dct_ortho(x):
    n = len(x)
    out = np.empty(n)
    for k in range(n):
        s = sum(x[i] * math.cos(math.pi * k * (2 * i + 1) / (2 * n)) for i in range(n))
        out[k] = s * (math.sqrt(1 / n) if k == 0 else math.sqrt(2 / n))
    return out


def test_load_pcm_silence_and_scaling(tmp_path):
    sig.write_pcm(tmp_path / "z.wav", np.zeros(8000), 8000)
    x, rate = sig.load_pcm(tmp_path / "z.wav")
    assert rate == 8000 and x.shape == (8000,) and not x.any()
    sig.write_pcm(tmp_path / "sq.wav", np.tile([1.0, -1.0], 100), 8000)
    x, _ = sig.load_pcm(tmp_path / "sq.wav")
    assert x.min() == -1.0 and x.max() == 32767 / 32768


def test_pcm_roundtrip_bit_identical(tmp_path, rng):
    q = rng.integers(-32768, 32768, 4000) / 32768.0
    sig.write_pcm(tmp_path / "r.wav", q, 16000)
    x, rate = sig.load_pcm(tmp_path / "r.wav")
    assert rate == 16000 and np.array_equal(x, q)


def test_load_pcm_rejects(tmp_path):
    import wave
    with wave.open(str(tmp_path / "st.wav"), "wb") as w:
        w.setnchannels(2)
        w.setsampwidth(2)
        w.setframerate(8000)
        w.writeframes(b"\0" * 40)
    with pytest.raises(UnsupportedFormat):
        sig.load_pcm(tmp_path / "st.wav")
    (tmp_path / "junk.wav").write_bytes(b"not a wav file")
    with pytest.raises(UnsupportedFormat):
        sig.load_pcm(tmp_path / "junk.wav")
    with pytest.raises(IoFailure):
        sig.load_pcm(tmp_path / "missing.wav")


def test_raw_signal_prep():
    assert sig.raw_signal_prep(tone(3), 8000).shape == (60000,)
    assert sig.raw_signal_prep(tone(3, rate=16000), 16000).shape == (60000,)
    assert np.allclose(sig.raw_signal_prep(np.full(800, 0.25), 8000)[:400], 0.25)
    long = tone(20)
    out = sig.raw_signal_prep(long, 8000)
    assert np.allclose(out, 0.5 * (long[:120000:2] + long[1:120000:2]))
    with pytest.raises(EmptySignal):
        sig.raw_signal_prep(np.zeros(0), 8000)


def test_shapes_for_15_seconds():
    x = tone(15)
    assert sig.mel_spectrogram(x, 8000).data.shape == (1501, 96)
    assert sig.mfcc(x, 8000).data.shape == (1501, 13)
    m = sig.rawsig(x, 8000)
    assert (m.frames, m.coeffs) == (60000, 1)


def test_silence_hits_floor():
    z = np.zeros(8000)
    assert np.all(sig.mel_spectrogram(z, 8000).data == math.log(1e-10))
    c = sig.mfcc(z, 8000).data
    assert np.allclose(c[:, 0], math.sqrt(26) * math.log(1e-10))
    assert np.allclose(c[:, 1:], 0.0, atol=1e-9)


def test_amplitude_scaling_law():
    x = tone(2)
    a = sig.mel_spectrogram(x, 8000).data
    b = sig.mel_spectrogram(2 * x, 8000).data
    above = a > math.log(1e-10) + 1e-6
    assert above.sum() > 1000
    assert np.allclose((b - a)[above], math.log(4), atol=1e-6)
    s = 1.7
    c = sig.mel_spectrogram(s * x, 8000).data
    assert np.all((c - a)[above] > 0)
    assert np.allclose((c - a)[above], 2 * math.log(s), atol=1e-6)


def test_mfcc_matches_naive_dct():
    x = tone(0.5)
    logmel = sig._log_mel(sig.power_spectrum(x, 8000), 26)
    got = sig.mfcc(x, 8000).data
    for f in (0, 3, 17, 40):
        assert np.allclose(got[f], naive_dct_ortho(logmel[f])[:13], atol=1e-9)


def test_filterbank_shape_and_coverage():
    fb = sig.mel_filterbank(96)
    assert fb.shape == (96, 129)
    assert np.all(fb.sum(axis=1) > 0)
    assert np.all(fb >= 0) and np.all(fb <= 1)
    assert sig.hz_to_mel(700.0) == pytest.approx(2595 * math.log10(2))
    assert sig.mel_to_hz(sig.hz_to_mel(1234.0)) == pytest.approx(1234.0)


def test_pool_signal():
    m = sig.SignalMatrix(np.full((10, 3), 2.5))
    p = sig.pool_signal(m)
    assert np.array_equal(p, [2.5] * 3 + [0] * 3 + [2.5] * 3 + [2.5] * 3)
    assert sig.pool_signal(sig.mfcc(tone(1), 8000)).shape == (52,)
    assert sig.pool_signal(sig.rawsig(tone(1), 8000)).shape == (5,)
    with pytest.raises(EmptySignal):
        sig.pool_signal(np.zeros((0, 3)))


def test_pool_matches_two_pass(rng):
    data = rng.normal(size=(500, 4))
    p = sig.pool_signal(data)
    for j in range(4):
        col = list(data[:, j])
        mean = sum(col) / len(col)
        var = sum((v - mean) ** 2 for v in col) / len(col)
        assert p[j] == pytest.approx(mean, abs=1e-9)
        assert p[4 + j] == pytest.approx(math.sqrt(var), abs=1e-9)
        assert p[8 + j] == min(col) and p[12 + j] == max(col)


def test_zero_crossing_rate():
    assert sig.zero_crossing_rate(np.array([1.0, -1.0, 1.0, -1.0, 1.0])) == 1.0
    assert sig.zero_crossing_rate(np.ones(10)) == 0.0


def test_extraction_is_deterministic():
    x = tone(1)
    assert np.array_equal(sig.mfcc(x, 8000).data, sig.mfcc(x.copy(), 8000).data)
