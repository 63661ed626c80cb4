"""Noise mixing at a target SNR, pitch shift and time shift."""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .audio_io import AudioClip, AudioError, load_wav, resample_ratio, to_canonical

SNR_LEVELS = (10.0, 15.0, 20.0, 25.0)
MAX_SEMITONES = 2.0
MAX_SHIFT_S = 0.1
MIN_POWER = 1e-12

KINDS = ("noise", "pitch", "time_shift")


@dataclass(frozen=True)
class AugmentSpec:
    kind: str
    seed: int = 0
    noise_id: Optional[str] = None
    snr_db: Optional[float] = None
    semitones: Optional[float] = None
    seconds: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown augmentation kind {self.kind!r}")
        needed = {"noise": ("noise_id", "snr_db"), "pitch": ("semitones",),
                  "time_shift": ("seconds",)}[self.kind]
        for name in needed:
            if getattr(self, name) is None:
                raise ValueError(f"{self.kind} augmentation requires {name}")

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentSpec":
        return cls(**d)


class NoiseBank:
    """Noise recordings keyed by category, e.g. ``car`` or ``babble``."""

    def __init__(self, clips: Dict[str, Sequence[AudioClip]]):
        self._clips = {k: list(v) for k, v in sorted(clips.items()) if len(v)}

    @classmethod
    def from_dir(cls, root: str | os.PathLike) -> "NoiseBank":
        """Load ``<root>/<noise_id>/*.wav``."""
        root = Path(root)
        if not root.is_dir():
            raise AudioError(f"noise bank {root} is not a directory")
        clips = {}
        for sub in sorted(p for p in root.iterdir() if p.is_dir()):
            files = sorted(sub.glob("*.wav"))
            clips[sub.name] = [to_canonical(load_wav(f)) for f in files]
        return cls(clips)

    @property
    def ids(self) -> List[str]:
        return list(self._clips)

    def __contains__(self, noise_id: str) -> bool:
        return noise_id in self._clips

    def clips(self, noise_id: str) -> List[AudioClip]:
        return list(self._clips[noise_id])

    def pick(self, noise_id: str, seed: int) -> AudioClip:
        if noise_id not in self._clips:
            raise KeyError(f"noise category {noise_id!r} not in bank {self.ids}")
        options = self._clips[noise_id]
        return options[int(np.random.default_rng(seed).integers(len(options)))]


@dataclass
class Mixture:
    clip: AudioClip
    clean_part: np.ndarray
    noise_part: np.ndarray
    gain: float
    offset: int


def mix_at_snr_detailed(clean: AudioClip, noise: AudioClip, snr_db: float,
                        seed: int) -> Mixture:
    """Mix and also return the scaled components the mixture is built from.

    ``clip.samples == gain * (clean_part + noise_part)``.
    """
    if clean.sample_rate != noise.sample_rate:
        raise AudioError("clean and noise sample rates differ")
    x = clean.samples
    p_clean = float(np.mean(x ** 2)) if len(x) else 0.0
    if p_clean <= MIN_POWER:
        raise AudioError("clean input is silent")
    if math.isinf(snr_db) and snr_db > 0:
        return Mixture(clean, x.copy(), np.zeros_like(x), 1.0, 0)
    n = noise.samples
    if float(np.mean(n ** 2)) <= MIN_POWER:
        raise AudioError("noise input is silent")
    if len(n) < len(x):
        n = np.tile(n, -(-len(x) // len(n)))
    rng = np.random.default_rng(seed)
    offset = int(rng.integers(len(n) - len(x) + 1))
    seg = n[offset:offset + len(x)]
    p_seg = float(np.mean(seg ** 2))
    if p_seg <= MIN_POWER:
        raise AudioError("selected noise segment is silent")
    scale = math.sqrt(p_clean / (p_seg * 10.0 ** (snr_db / 10.0)))
    noise_part = scale * seg
    mixed = x + noise_part
    peak = float(np.max(np.abs(mixed)))
    gain = 1.0 / peak if peak > 1.0 else 1.0
    return Mixture(clean.with_samples(mixed * gain), x.copy(), noise_part, gain, offset)


def mix_at_snr(clean: AudioClip, noise: AudioClip, snr_db: float, seed: int) -> AudioClip:
    return mix_at_snr_detailed(clean, noise, snr_db, seed).clip


def pitch_shift(clip: AudioClip, semitones: float) -> AudioClip:
    """Resample by 2**(semitones/12) then crop or zero-pad to the input length."""
    if abs(semitones) > 12:
        raise ValueError(f"pitch shift of {semitones} semitones exceeds 12")
    if semitones == 0:
        return clip
    factor = 2.0 ** (semitones / 12.0)
    y = resample_ratio(clip.samples, 1.0 / factor)
    out = np.zeros(len(clip))
    m = min(len(y), len(out))
    out[:m] = y[:m]
    return clip.with_samples(np.clip(out, -1.0, 1.0))


def time_shift(clip: AudioClip, seconds: float) -> AudioClip:
    """Non-circular shift; positive values delay the signal, vacated samples are zero."""
    if abs(seconds) >= clip.duration:
        raise ValueError(f"shift of {seconds} s exceeds clip duration {clip.duration} s")
    k = int(round(seconds * clip.sample_rate))
    x = clip.samples
    out = np.zeros_like(x)
    if k >= 0:
        out[k:] = x[:len(x) - k]
    else:
        out[:k] = x[-k:]
    return clip.with_samples(out)


def apply(clip: AudioClip, spec: AugmentSpec, bank: Optional[NoiseBank] = None) -> AudioClip:
    if spec.kind == "noise":
        if bank is None:
            raise ValueError("noise augmentation needs a noise bank")
        noise = bank.pick(spec.noise_id, spec.seed)
        if float(np.mean(clip.samples ** 2)) <= MIN_POWER:
            return clip
        return mix_at_snr(clip, noise, spec.snr_db, spec.seed)
    if spec.kind == "pitch":
        return pitch_shift(clip, spec.semitones)
    return time_shift(clip, spec.seconds)


def sample_spec(rng: np.random.Generator, seed: int, noise_ids: Sequence[str],
                kinds: Sequence[str] = KINDS) -> AugmentSpec:
    """Default sampler: SNR from {10,15,20,25} dB, +-2 semitones, +-0.1 s."""
    kinds = [k for k in kinds if k != "noise" or noise_ids]
    if not kinds:
        raise ValueError("no augmentation kinds available")
    kind = kinds[int(rng.integers(len(kinds)))]
    if kind == "noise":
        return AugmentSpec("noise", seed=seed,
                           noise_id=noise_ids[int(rng.integers(len(noise_ids)))],
                           snr_db=float(SNR_LEVELS[int(rng.integers(len(SNR_LEVELS)))]))
    if kind == "pitch":
        return AugmentSpec("pitch", seed=seed,
                           semitones=float(rng.uniform(-MAX_SEMITONES, MAX_SEMITONES)))
    return AugmentSpec("time_shift", seed=seed,
                       seconds=float(rng.uniform(-MAX_SHIFT_S, MAX_SHIFT_S)))


def write_plan(path: str | os.PathLike, specs: Iterable[AugmentSpec]) -> None:
    with open(path, "w") as fh:
        for spec in specs:
            fh.write(json.dumps(spec.to_dict(), sort_keys=True) + "\n")


def read_plan(path: str | os.PathLike) -> List[AugmentSpec]:
    with open(path) as fh:
        return [AugmentSpec.from_dict(json.loads(line)) for line in fh if line.strip()]

