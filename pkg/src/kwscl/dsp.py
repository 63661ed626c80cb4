"""MFCC front end: 25 ms Hamming frames every 10 ms, 40 cepstral coefficients."""

from __future__ import annotations

import csv
import os
import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.fft import dct, rfft

from . import CANONICAL_RATE
from .audio_io import AudioClip, AudioError

FRAME_LEN = 400
FRAME_STEP = 160
N_FFT = 512
N_MELS = 64
N_MFCC = 40
F_MIN = 20.0
F_MAX = 7600.0
PRE_EMPHASIS = 0.97
LOG_FLOOR = 1e-10

FEATURE_MAGIC = b"KWSF"
FEATURE_VERSION = 1
_HEADER = struct.Struct("<4sHIIIII")


def num_frames(n_samples: int) -> int:
    if n_samples < FRAME_LEN:
        raise AudioError(f"clip of {n_samples} samples is shorter than one frame")
    return 1 + (n_samples - FRAME_LEN) // FRAME_STEP


def hamming(n: int = FRAME_LEN) -> np.ndarray:
    return 0.54 - 0.46 * np.cos(2 * np.pi * np.arange(n) / (n - 1))


def frame_and_window(clip: AudioClip) -> np.ndarray:
    """Return the (T, 400) matrix of Hamming-windowed frames."""
    if clip.sample_rate != CANONICAL_RATE:
        raise AudioError(f"expected {CANONICAL_RATE} Hz, got {clip.sample_rate}")
    return _frames(clip.samples) * hamming()


def _frames(x: np.ndarray) -> np.ndarray:
    t = num_frames(x.shape[0])
    view = np.lib.stride_tricks.sliding_window_view(x, FRAME_LEN)
    return view[::FRAME_STEP][:t]


def power_spectrum(frames: np.ndarray) -> np.ndarray:
    """|FFT|^2 / 512 of zero-padded frames; last axis 400 -> 257."""
    spec = rfft(frames, n=N_FFT, axis=-1)
    return (spec.real ** 2 + spec.imag ** 2) / N_FFT


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@dataclass(frozen=True, eq=False)
class MelFilterbank:
    n_mels: int
    f_min: float
    f_max: float
    weights: np.ndarray  # (n_mels, N_FFT // 2 + 1)

    def apply(self, power: np.ndarray) -> np.ndarray:
        return power @ self.weights.T


@lru_cache(maxsize=8)
def mel_filterbank(n_mels: int = N_MELS, f_min: float = F_MIN, f_max: float = F_MAX,
                   n_fft: int = N_FFT, sample_rate: int = CANONICAL_RATE) -> MelFilterbank:
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lower) / (center - lower)
    falling = (upper - freqs[None, :]) / (upper - center)
    w = np.maximum(0.0, np.minimum(rising, falling))
    w.setflags(write=False)
    return MelFilterbank(n_mels, f_min, f_max, w)


def pre_emphasis(x: np.ndarray, coeff: float = PRE_EMPHASIS) -> np.ndarray:
    y = np.array(x, dtype=np.float64)
    y[1:] -= coeff * x[:-1]
    return y


def mfcc(clip: AudioClip, normalize: bool = False) -> np.ndarray:
    """40 MFCCs per 10 ms frame, shape (T, 40).

    ``normalize`` applies per-utterance mean/variance normalisation per
    coefficient; it is off by default.
    """
    if clip.sample_rate != CANONICAL_RATE:
        raise AudioError(f"expected {CANONICAL_RATE} Hz, got {clip.sample_rate}")
    frames = _frames(pre_emphasis(clip.samples)) * hamming()
    mel = mel_filterbank().apply(power_spectrum(frames))
    logmel = np.log(np.maximum(mel, LOG_FLOOR))
    coeffs = dct(logmel, type=2, norm="ortho", axis=-1)[:, :N_MFCC]
    if normalize:
        coeffs = (coeffs - coeffs.mean(axis=0)) / (coeffs.std(axis=0) + 1e-8)
    return coeffs


def save_features(path: str | os.PathLike, feats: np.ndarray) -> None:
    """Binary feature dump: fixed header then row-major little-endian float32."""
    feats = np.asarray(feats, dtype="<f4")
    t, d = feats.shape
    header = _HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, t, d,
                          CANONICAL_RATE, FRAME_LEN, FRAME_STEP)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(feats).tobytes())


def load_features(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated feature file")
    magic, version, t, d, _rate, _flen, _fstep = _HEADER.unpack_from(raw)
    if magic != FEATURE_MAGIC or version != FEATURE_VERSION:
        raise ValueError(f"{path}: not a feature file (magic={magic!r}, version={version})")
    body = raw[_HEADER.size:]
    if len(body) != t * d * 4:
        raise ValueError(f"{path}: expected {t}x{d} floats, found {len(body) // 4}")
    return np.frombuffer(body, dtype="<f4").reshape(t, d).copy()


def export_csv(path: str | os.PathLike, feats: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame"] + [f"c{i}" for i in range(feats.shape[1])])
        for i, row in enumerate(feats):
            writer.writerow([i] + [f"{v:.6g}" for v in row])
