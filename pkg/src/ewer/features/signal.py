"""Signal inputs at fixed dimensions: raw waveform, log-mel spectrogram, MFCC.

Every extractor first resamples to 8 kHz and pads or clips to 15 s, so a
clip of any length yields 60000 raw samples (after 4 kHz decimation) or 1501
spectral frames.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.fft import dct

from ..errors import EmptySignal, IoFailure, UnsupportedFormat

RATE = 8000
MAX_SECONDS = 15.0
N_SAMPLES = int(RATE * MAX_SECONDS)  # 120000
RAW_DIM = N_SAMPLES // 2  # 60000 after 4 kHz decimation
WIN = 200  # 25 ms
HOP = 80  # 10 ms
N_FFT = 256
N_MELS = 96
N_MFCC_FILTERS = 26
N_MFCC = 13
LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class SignalMatrix:
    data: np.ndarray

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def coeffs(self) -> int:
        return self.data.shape[1]


def load_pcm(path: str | Path) -> tuple[np.ndarray, int]:
    """Read 16-bit mono PCM WAV, scaled to [-1, 1) by 1/32768."""
    try:
        with wave.open(str(path), "rb") as w:
            channels, width, rate, n = w.getnchannels(), w.getsampwidth(), w.getframerate(), w.getnframes()
            raw = w.readframes(n)
    except FileNotFoundError as e:
        raise IoFailure(f"cannot open {path}: {e.strerror}") from e
    except wave.Error as e:
        raise UnsupportedFormat(f"{path}: {e}") from e
    except EOFError as e:
        raise UnsupportedFormat(f"{path}: truncated WAV") from e
    if channels != 1:
        raise UnsupportedFormat(f"{path}: {channels} channels, only mono is supported")
    if width != 2:
        raise UnsupportedFormat(f"{path}: {8 * width}-bit samples, only 16-bit PCM is supported")
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0, rate


def write_pcm(path: str | Path, samples: np.ndarray, rate: int) -> None:
    q = np.clip(np.round(np.asarray(samples, dtype=np.float64) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(int(rate))
        w.writeframes(q.tobytes())


def resample(samples, rate: int, target: int = RATE) -> np.ndarray:
    """Linear interpolation onto a ``target`` Hz grid starting at t=0."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise EmptySignal("signal has no samples")
    if rate == target:
        return x.copy()
    n_out = max(1, int(round(x.size * target / rate)))
    t_out = np.arange(n_out) * (rate / target)
    return np.interp(t_out, np.arange(x.size), x)


def fit_length(x: np.ndarray, n: int = N_SAMPLES) -> np.ndarray:
    if x.size >= n:
        return x[:n].copy()
    return np.concatenate([x, np.zeros(n - x.size)])


def _prepare(samples, rate: int) -> np.ndarray:
    return fit_length(resample(samples, rate))


def raw_signal_prep(samples, rate: int) -> np.ndarray:
    """8 kHz, 15 s, then pairwise averaging down to 4 kHz: always 60000 values."""
    x = _prepare(samples, rate)
    return 0.5 * (x[0::2] + x[1::2])


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=None)
def mel_filterbank(n_filters: int, n_fft: int = N_FFT, rate: int = RATE,
                   fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular filters evenly spaced on the mel scale, shape (n_filters, n_fft//2+1).

    Filters narrower than one DFT bin would be empty; those get unit weight
    on the bin nearest their centre, so neighbours may share bins.
    """
    fmax = rate / 2.0 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_filters + 2))
    freqs = np.arange(n_fft // 2 + 1) * rate / n_fft
    fb = np.zeros((n_filters, freqs.size))
    for i in range(n_filters):
        lo, c, hi = edges[i], edges[i + 1], edges[i + 2]
        rise = (freqs - lo) / (c - lo)
        fall = (hi - freqs) / (hi - c)
        fb[i] = np.maximum(0.0, np.minimum(rise, fall))
        if fb[i].sum() == 0.0:
            fb[i, int(np.argmin(np.abs(freqs - c)))] = 1.0
    fb.setflags(write=False)
    return fb


def frame_signal(x: np.ndarray, win: int = WIN, hop: int = HOP) -> np.ndarray:
    """Centred frames: frame t spans [t*hop - win/2, t*hop + win/2), zero padded.

    Yields 1 + len(x)//hop frames (1501 for 15 s at 8 kHz).
    """
    n_frames = 1 + x.size // hop
    half = win // 2
    padded = np.concatenate([np.zeros(half), x, np.zeros(win)])
    idx = np.arange(n_frames)[:, None] * hop + np.arange(win)[None, :]
    return padded[idx]


def power_spectrum(samples, rate: int) -> np.ndarray:
    frames = frame_signal(_prepare(samples, rate)) * np.hamming(WIN)
    spec = np.fft.rfft(frames, n=N_FFT, axis=1)
    return spec.real ** 2 + spec.imag ** 2


def _log_mel(power: np.ndarray, n_filters: int) -> np.ndarray:
    return np.log(np.maximum(power @ mel_filterbank(n_filters).T, LOG_FLOOR))


def mel_spectrogram(samples, rate: int) -> SignalMatrix:
    return SignalMatrix(_log_mel(power_spectrum(samples, rate), N_MELS))


def mfcc(samples, rate: int) -> SignalMatrix:
    logmel = _log_mel(power_spectrum(samples, rate), N_MFCC_FILTERS)
    return SignalMatrix(dct(logmel, type=2, norm="ortho", axis=1)[:, :N_MFCC])


def rawsig(samples, rate: int) -> SignalMatrix:
    return SignalMatrix(raw_signal_prep(samples, rate)[:, None])


def zero_crossing_rate(x: np.ndarray) -> float:
    if x.size < 2:
        return 0.0
    s = np.signbit(x)
    return float(np.count_nonzero(s[1:] != s[:-1]) / (x.size - 1))


def pool_signal(m: SignalMatrix | np.ndarray) -> np.ndarray:
    """Per-coefficient mean, std, min and max over frames, blocked in that order.

    A single-column (raw waveform) matrix also gets its zero-crossing rate.
    """
    data = m.data if isinstance(m, SignalMatrix) else np.asarray(m, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise EmptySignal("cannot pool an empty signal matrix")
    parts = [data.mean(axis=0), data.std(axis=0), data.min(axis=0), data.max(axis=0)]
    if data.shape[1] == 1:
        parts.append(np.array([zero_crossing_rate(data[:, 0])]))
    return np.concatenate(parts)


EXTRACTORS = {"rawsig": rawsig, "melspec": mel_spectrogram, "mfcc": mfcc}
POOLED_DIMS = {"rawsig": 5, "melspec": 4 * N_MELS, "mfcc": 4 * N_MFCC}
