"""Mono audio clips: WAV I/O, resampling and test-signal synthesis."""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy.io import wavfile

from . import CANONICAL_RATE

PCM16_SCALE = 32768.0
RESAMPLE_TAPS = 32


class AudioError(ValueError):
    """Raised for unreadable, unsupported or empty audio."""


@dataclass(frozen=True, eq=False)
class AudioClip:
    samples: np.ndarray
    sample_rate: int = CANONICAL_RATE

    def __post_init__(self):
        x = np.array(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise AudioError(f"sample rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(x)):
            raise AudioError("clip contains non-finite samples")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def with_samples(self, samples) -> "AudioClip":
        return AudioClip(samples, self.sample_rate)


def load_wav(path: str | os.PathLike) -> AudioClip:
    """Read a PCM16 or float32 WAV file as a mono clip in [-1, 1]."""
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", wavfile.WavFileWarning)
            rate, data = wavfile.read(os.fspath(path))
    except (OSError, ValueError, EOFError) as exc:
        raise AudioError(f"cannot read {path}: {exc}") from exc
    if data.dtype == np.int16:
        x = data.astype(np.float64) / PCM16_SCALE
    elif data.dtype == np.float32:
        x = data.astype(np.float64)
    else:
        raise AudioError(f"{path}: unsupported sample encoding {data.dtype}")
    if x.ndim == 2:
        if x.shape[1] not in (1, 2):
            raise AudioError(f"{path}: {x.shape[1]} channels not supported")
        x = x.mean(axis=1)
    if x.shape[0] == 0:
        raise AudioError(f"{path}: zero-length audio")
    if not np.all(np.isfinite(x)):
        raise AudioError(f"{path}: non-finite samples")
    return AudioClip(np.clip(x, -1.0, 1.0), rate)


def save_wav(path: str | os.PathLike, clip: AudioClip, encoding: str = "pcm16") -> None:
    x = clip.samples
    if encoding == "pcm16":
        data = np.clip(np.round(x * PCM16_SCALE), -32768, 32767).astype("<i2")
    elif encoding == "float32":
        data = x.astype("<f4")
    else:
        raise AudioError(f"unknown encoding {encoding!r}")
    wavfile.write(os.fspath(path), clip.sample_rate, data)


def normalize_peak(clip: AudioClip, peak: float = 1.0) -> AudioClip:
    m = float(np.max(np.abs(clip.samples))) if len(clip) else 0.0
    if m <= peak or m == 0.0:
        return clip
    return clip.with_samples(clip.samples * (peak / m))


def _sinc_kernel(offsets: np.ndarray, cutoff: float) -> np.ndarray:
    # Blackman-windowed sinc, support of RESAMPLE_TAPS input samples.
    half = RESAMPLE_TAPS / 2.0
    win = np.where(
        np.abs(offsets) < half,
        0.42 + 0.5 * np.cos(np.pi * offsets / half) + 0.08 * np.cos(2 * np.pi * offsets / half),
        0.0,
    )
    return cutoff * np.sinc(cutoff * offsets) * win


def resample_ratio(x: np.ndarray, ratio: float) -> np.ndarray:
    """Resample ``x`` so the output has ``ratio`` samples per input sample."""
    x = np.asarray(x, dtype=np.float64)
    n_out = int(round(x.shape[0] * ratio))
    if n_out <= 0:
        return np.zeros(0)
    cutoff = min(1.0, ratio)
    pos = np.arange(n_out) / ratio
    base = np.floor(pos).astype(np.int64)
    taps = np.arange(-RESAMPLE_TAPS // 2 + 1, RESAMPLE_TAPS // 2 + 1)
    idx = base[:, None] + taps[None, :]
    weights = _sinc_kernel(pos[:, None] - idx, cutoff)
    valid = (idx >= 0) & (idx < x.shape[0])
    vals = x[np.clip(idx, 0, x.shape[0] - 1)] * valid
    return np.sum(vals * weights, axis=1)


def resample(clip: AudioClip, target_hz: int) -> AudioClip:
    if target_hz <= 0:
        raise AudioError(f"target rate must be positive, got {target_hz}")
    if target_hz == clip.sample_rate:
        return clip
    y = resample_ratio(clip.samples, target_hz / clip.sample_rate)
    return AudioClip(y, target_hz)


def to_canonical(clip: AudioClip) -> AudioClip:
    return resample(clip, CANONICAL_RATE)


def synth_sine(freq_hz: float, duration_s: float, amplitude: float = 0.5,
               sample_rate: int = CANONICAL_RATE, phase: float = 0.0) -> AudioClip:
    if not 0.0 <= freq_hz < sample_rate / 2:
        raise AudioError(f"frequency {freq_hz} Hz outside [0, Nyquist)")
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate
    if freq_hz == 0.0:
        return AudioClip(np.full(n, amplitude * np.cos(phase)), sample_rate)
    return AudioClip(amplitude * np.cos(2 * np.pi * freq_hz * t + phase), sample_rate)


def synth_noise(duration_s: float, amplitude: float = 0.1, seed: int = 0,
                sample_rate: int = CANONICAL_RATE) -> AudioClip:
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate))
    return AudioClip(np.clip(amplitude * rng.standard_normal(n), -1.0, 1.0), sample_rate)


def synth_bursts(schedule: Sequence[Tuple[float, float]], duration_s: float,
                 freq_hz: float = 1000.0, amplitude: float = 0.5,
                 floor_db: float = -40.0, seed: int = 0,
                 sample_rate: int = CANONICAL_RATE) -> Tuple[AudioClip, List[Tuple[float, float]]]:
    """Tone bursts over a white-noise floor ``floor_db`` below the burst RMS.

    Returns the clip and the schedule it was built from.
    """
    segs = sorted((float(a), float(b)) for a, b in schedule)
    prev_end = 0.0
    for a, b in segs:
        if not (0.0 <= a < b <= duration_s) or a < prev_end:
            raise AudioError(f"invalid burst schedule {schedule}")
        prev_end = b
    n = int(round(duration_s * sample_rate))
    rng = np.random.default_rng(seed)
    burst_rms = amplitude / np.sqrt(2.0)
    x = burst_rms * 10.0 ** (floor_db / 20.0) * rng.standard_normal(n)
    t = np.arange(n) / sample_rate
    for a, b in segs:
        i0, i1 = int(round(a * sample_rate)), int(round(b * sample_rate))
        x[i0:i1] += amplitude * np.sin(2 * np.pi * freq_hz * t[i0:i1])
    return AudioClip(np.clip(x, -1.0, 1.0), sample_rate), segs


def synth(kind: str, seed: int = 0, **params):
    """Dispatch to the ``synth_*`` generators by name."""
    if kind == "sine":
        return synth_sine(**params)
    if kind == "noise":
        return synth_noise(seed=seed, **params)
    if kind == "tone-burst-sequence":
        return synth_bursts(seed=seed, **params)
    raise AudioError(f"unknown synth kind {kind!r}")
