"""Synthetic speech-like corpora and noise banks for tests and desk-scale runs.

Words are sequences of formant-synthesised syllables (harmonic voicing
shaped by three vowel formants, optionally preceded by a fricative, plosive
or nasal onset).  Speakers differ in pitch, vocal-tract scale, speaking rate
and loudness.  Noise categories mimic car, babble, music, cafe and kitchen
backgrounds.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.signal import butter, sosfilt

from . import CANONICAL_RATE
from .audio_io import AudioClip, save_wav
from .augment import NoiseBank
from .corpus import AlignmentRow, Corpus, SINGLE_WORD, Utterance
from .seeding import derive_seed, rng_for

SR = CANONICAL_RATE

VOWELS = {
    "i": (280, 2250, 2900), "I": (400, 1900, 2550), "e": (530, 1850, 2500),
    "ae": (660, 1700, 2400), "a": (730, 1100, 2450), "o": (570, 850, 2400),
    "u": (300, 870, 2250), "U": (440, 1020, 2250), "A": (640, 1200, 2400),
    "r": (490, 1350, 1700),
}
ONSETS = ("", "s", "sh", "f", "p", "t", "k", "m", "n")
_FRICATIVE_BANDS = {"s": (4000, 7500), "sh": (1800, 4500), "f": (1000, 7000)}
_PLOSIVE_BANDS = {"p": (300, 2000), "t": (2500, 6500), "k": (1200, 3500)}

GSC_PRETASK = ("backward", "bed", "bird", "cat", "dog", "down", "eight", "five")
GSC_MAINTASK = ("four", "marvin", "right")
NOISE_CATEGORIES = ("car", "babble", "music", "cafe", "kitchen")


@dataclass(frozen=True)
class Syllable:
    onset: str
    vowel: str
    glide_to: Optional[str]
    length: float
    contour: float


@dataclass(frozen=True)
class WordSpec:
    name: str
    syllables: Tuple[Syllable, ...]


@dataclass(frozen=True)
class Speaker:
    id: str
    f0: float
    tract: float
    rate: float
    loudness: float


def make_vocabulary(names: Sequence[str], seed: int, min_syll: int = 2,
                    max_syll: int = 3) -> List[WordSpec]:
    """Random, mutually distinct syllable sequences, one per name."""
    rng = rng_for(seed, "vocab")
    vowels = sorted(VOWELS)
    seen, out = set(), []
    for name in names:
        while True:
            n = int(rng.integers(min_syll, max_syll + 1))
            sylls = []
            for _ in range(n):
                glide = vowels[int(rng.integers(len(vowels)))] if rng.random() < 0.35 else None
                sylls.append(Syllable(onset=ONSETS[int(rng.integers(len(ONSETS)))],
                                      vowel=vowels[int(rng.integers(len(vowels)))],
                                      glide_to=glide,
                                      length=float(rng.uniform(0.12, 0.24)),
                                      contour=float(rng.uniform(-0.25, 0.25))))
            key = tuple((s.onset, s.vowel, s.glide_to) for s in sylls)
            if key not in seen:
                seen.add(key)
                out.append(WordSpec(name, tuple(sylls)))
                break
    return out


def make_speakers(n: int, seed: int, prefix: str = "spk") -> List[Speaker]:
    rng = rng_for(seed, "speakers", prefix)
    return [Speaker(id=f"{prefix}{i:03d}", f0=float(rng.uniform(90, 240)),
                    tract=float(rng.uniform(0.88, 1.14)), rate=float(rng.uniform(0.85, 1.15)),
                    loudness=float(rng.uniform(0.15, 0.5)))
            for i in range(n)]


def _bandpass(x: np.ndarray, lo: float, hi: float, order: int = 4) -> np.ndarray:
    sos = butter(order, [lo, min(hi, SR / 2 - 100)], btype="band", fs=SR, output="sos")
    return sosfilt(sos, x)


def _envelope(n: int, attack: int, release: int) -> np.ndarray:
    env = np.ones(n)
    a, r = min(attack, n // 2), min(release, n // 2)
    if a:
        env[:a] = np.linspace(0.0, 1.0, a)
    if r:
        env[n - r:] = np.linspace(1.0, 0.0, r)
    return env


def _voiced(n: int, f0: np.ndarray, formants: np.ndarray) -> np.ndarray:
    """Harmonic source shaped by time-varying formants ``(n, 3)``."""
    phase = 2 * np.pi * np.cumsum(f0) / SR
    n_harm = int(7600 // f0.min())
    k = np.arange(1, n_harm + 1)[:, None]
    freqs = k * f0[None, :]
    bandwidths = np.array([90.0, 110.0, 170.0])
    gains = np.array([1.0, 0.6, 0.3])
    amp = np.zeros_like(freqs)
    for j in range(3):
        amp += gains[j] / (1.0 + ((freqs - formants[None, :, j]) / (bandwidths[j] / 2)) ** 2)
    amp *= (freqs < 7600) / (1.0 + freqs / 2000.0)
    return np.sum(amp * np.sin(k * phase[None, :]), axis=0)


def render_word(word: WordSpec, speaker: Speaker, rng: np.random.Generator) -> np.ndarray:
    """Waveform of one spoken word (no surrounding silence), peak about ``speaker.loudness``."""
    rate = speaker.rate * rng.uniform(0.92, 1.08)
    tract = speaker.tract * rng.uniform(0.97, 1.03)
    f0_base = speaker.f0 * rng.uniform(0.94, 1.06)
    parts = []
    for syl in word.syllables:
        if syl.onset in _FRICATIVE_BANDS:
            m = int(SR * 0.07 / rate)
            lo, hi = _FRICATIVE_BANDS[syl.onset]
            parts.append(0.25 * _bandpass(rng.standard_normal(m), lo * tract, hi)
                         * _envelope(m, m // 4, m // 4))
        elif syl.onset in _PLOSIVE_BANDS:
            gap, burst = int(SR * 0.03 / rate), int(SR * 0.015)
            lo, hi = _PLOSIVE_BANDS[syl.onset]
            parts.append(np.zeros(gap))
            parts.append(0.5 * _bandpass(rng.standard_normal(burst), lo * tract, hi)
                         * _envelope(burst, 2, burst // 2))
        elif syl.onset in ("m", "n"):
            m = int(SR * 0.06 / rate)
            nasal = np.tile([250.0, 2200.0 if syl.onset == "m" else 2700.0, 3300.0], (m, 1)) * tract
            parts.append(0.3 * _voiced(m, np.full(m, f0_base), nasal) * _envelope(m, m // 5, 0))
        n = int(SR * syl.length / rate)
        t = np.linspace(0.0, 1.0, n)
        f0 = f0_base * (1.0 + syl.contour * (t - 0.5))
        start = np.array(VOWELS[syl.vowel], dtype=float)
        end = np.array(VOWELS[syl.glide_to or syl.vowel], dtype=float)
        formants = (start[None, :] + (end - start)[None, :] * t[:, None]) * tract
        parts.append(_voiced(n, f0, formants) * _envelope(n, int(0.015 * SR), int(0.04 * SR)))
    x = np.concatenate(parts)
    return x * (speaker.loudness / (np.max(np.abs(x)) + 1e-12))


def _floor(n: int, level: float, rng: np.random.Generator) -> np.ndarray:
    return level * rng.standard_normal(n)


def make_word_clip(word: WordSpec, speaker: Speaker, seed: int, clip_s: float = 1.0,
                   floor_db: float = -55.0) -> AudioClip:
    rng = np.random.default_rng(seed)
    w = render_word(word, speaker, rng)
    n = int(round(clip_s * SR))
    w = w[:n]
    x = _floor(n, speaker.loudness * 10 ** (floor_db / 20), rng)
    slack = n - len(w)
    onset = int(rng.integers(0, slack + 1)) if slack > 0 else 0
    x[onset:onset + len(w)] += w
    return AudioClip(np.clip(x, -1.0, 1.0))


def build_single_word_corpus(words: Sequence[WordSpec], per_word: int, seed: int,
                             n_speakers: int = 40, speaker_prefix: str = "spk") -> Corpus:
    """GSC-style corpus: ``per_word`` one-second clips for each word, ids ``<word>/<spk>_nohash_<k>``."""
    speakers = make_speakers(n_speakers, seed, speaker_prefix)
    utts = []
    for w in words:
        rng = rng_for(seed, "assign", w.name)
        for k in range(per_word):
            spk = speakers[int(rng.integers(len(speakers)))]
            clip = make_word_clip(w, spk, derive_seed(seed, "clip", w.name, k))
            utts.append(Utterance(id=f"{w.name}/{spk.id}_nohash_{k}", word=w.name,
                                  speaker=spk.id, source=SINGLE_WORD, clip=clip))
    return Corpus(utts)


def build_long_audio(vocab: Sequence[WordSpec], n_sentences: int, seed: int,
                     words_per_sentence: Tuple[int, int] = (8, 14), n_speakers: int = 30,
                     floor_db: float = -55.0) -> Tuple[Dict[str, AudioClip], List[AlignmentRow]]:
    """Sentence-like recordings plus word-level alignment rows (ground truth)."""
    speakers = make_speakers(n_speakers, seed, "reader")
    audio, rows = {}, []
    for s in range(n_sentences):
        rng = rng_for(seed, "sentence", s)
        spk = speakers[int(rng.integers(len(speakers)))]
        n_words = int(rng.integers(words_per_sentence[0], words_per_sentence[1] + 1))
        pieces, t = [np.zeros(int(0.2 * SR))], 0.2
        sid = f"utt{s:04d}"
        for _ in range(n_words):
            w = vocab[int(rng.integers(len(vocab)))]
            x = render_word(w, spk, rng)
            rows.append(AlignmentRow(sid, w.name, round(t, 4), round(t + len(x) / SR, 4)))
            gap = np.zeros(int(rng.uniform(0.03, 0.15) * SR))
            pieces += [x, gap]
            t += (len(x) + len(gap)) / SR
        pieces.append(np.zeros(int(0.2 * SR)))
        x = np.concatenate(pieces)
        x += _floor(len(x), spk.loudness * 10 ** (floor_db / 20), rng)
        audio[sid] = AudioClip(np.clip(x, -1.0, 1.0))
    return audio, rows


def _car(n, rng):
    brown = np.cumsum(rng.standard_normal(n))
    brown = _bandpass(brown - brown.mean(), 20, 400, order=2)
    t = np.arange(n) / SR
    rpm = rng.uniform(25, 45)
    hum = sum(np.sin(2 * np.pi * rpm * h * t + rng.uniform(0, 6.3)) / h for h in (1, 2, 3, 4))
    x = brown / (np.std(brown) + 1e-12) + 0.5 * hum
    return x + 0.05 * _bandpass(rng.standard_normal(n), 500, 3000)


def _babble(n, rng, vocab, speakers):
    x = np.zeros(n)
    for _ in range(int(rng.integers(5, 9))):
        pos = 0
        spk = speakers[int(rng.integers(len(speakers)))]
        while pos < n:
            w = render_word(vocab[int(rng.integers(len(vocab)))], spk, rng)
            m = min(len(w), n - pos)
            x[pos:pos + m] += w[:m]
            pos += m + int(rng.uniform(0.02, 0.2) * SR)
    return x


def _music(n, rng):
    x = np.zeros(n)
    t = np.arange(n) / SR
    note_len = int(rng.uniform(0.15, 0.4) * SR)
    for start in range(0, n, note_len):
        m = min(note_len, n - start)
        for _ in range(3):
            f = 110.0 * 2 ** (int(rng.integers(0, 36)) / 12)
            tone = sum(np.sin(2 * np.pi * f * h * t[start:start + m]) / h ** 1.5 for h in range(1, 6))
            x[start:start + m] += tone * np.exp(-np.arange(m) / (0.3 * SR))
    return x


def _clatter(n, rng, rate_hz, lo, hi):
    x = np.zeros(n)
    for _ in range(max(1, int(rate_hz * n / SR))):
        pos = int(rng.integers(0, n))
        m = min(int(0.08 * SR), n - pos)
        f = rng.uniform(lo, hi)
        x[pos:pos + m] += np.sin(2 * np.pi * f * np.arange(m) / SR) * np.exp(-np.arange(m) / (0.01 * SR))
    return x


def _norm(x):
    return x / (np.std(x) + 1e-12)


def make_noise_clip(category: str, seed: int, duration_s: float = 3.0,
                    vocab: Optional[Sequence[WordSpec]] = None) -> AudioClip:
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * SR))
    if vocab is None:
        vocab = make_vocabulary([f"b{i}" for i in range(40)], seed=derive_seed(seed, "babble-vocab"),
                                min_syll=1, max_syll=3)
    speakers = make_speakers(12, seed, "babbler")
    if category == "car":
        x = _norm(_car(n, rng))
    elif category == "babble":
        x = _norm(_babble(n, rng, vocab, speakers))
    elif category == "music":
        x = _norm(_music(n, rng))
    elif category == "cafe":
        x = (_norm(_babble(n, rng, vocab, speakers)) + 0.6 * _norm(_clatter(n, rng, 3, 2000, 6000))
             + 0.3 * _norm(_bandpass(rng.standard_normal(n), 100, 3000)))
    elif category == "kitchen":
        x = (_norm(_clatter(n, rng, 6, 800, 5000))
             + 0.7 * _norm(_bandpass(rng.standard_normal(n), 1000, 4000)))
    elif category == "white":
        x = rng.standard_normal(n)
    elif category == "tonal":
        x = _norm(np.sin(2 * np.pi * rng.uniform(200, 2000) * np.arange(n) / SR))
    else:
        raise ValueError(f"unknown noise category {category!r}")
    x = _norm(x)
    return AudioClip(0.25 * x / max(1.0, np.max(np.abs(0.25 * x))))


def build_noise_bank(seed: int, categories: Sequence[str] = NOISE_CATEGORIES,
                     clips_per_category: int = 3, duration_s: float = 3.0) -> NoiseBank:
    return NoiseBank({c: [make_noise_clip(c, derive_seed(seed, "noise", c, k), duration_s)
                          for k in range(clips_per_category)]
                      for c in categories})


def write_single_word_corpus(root: str | os.PathLike, corpus: Corpus) -> None:
    root = Path(root)
    for u in corpus:
        word, name = u.id.split("/", 1)
        (root / word).mkdir(parents=True, exist_ok=True)
        save_wav(root / word / f"{name}.wav", corpus.audio(u.id))


def write_noise_bank(root: str | os.PathLike, bank: NoiseBank) -> None:
    root = Path(root)
    for cat in bank.ids:
        (root / cat).mkdir(parents=True, exist_ok=True)
        for k, clip in enumerate(bank.clips(cat)):
            save_wav(root / cat / f"{cat}_{k:02d}.wav", clip)


def write_long_audio(root: str | os.PathLike, audio: Dict[str, AudioClip]) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for aid, clip in audio.items():
        save_wav(root / f"{aid}.wav", clip)


@dataclass
class DeskFixture:
    """Everything a desk-scale experiment needs, generated from one seed."""
    corpus: Corpus
    chunked: Corpus
    alignments: List[AlignmentRow]
    long_audio: Dict[str, AudioClip]
    train_noise: NoiseBank
    eval_noise: NoiseBank
    pretask_words: Tuple[str, ...]
    maintask_words: Tuple[str, ...]


def build_desk_fixture(seed: int, pretask_per_word: int = 100, maintask_per_word: int = 50,
                       n_sentences: int = 100, n_long_words: int = 24,
                       pretask_words: Sequence[str] = GSC_PRETASK,
                       maintask_words: Sequence[str] = GSC_MAINTASK,
                       min_chunk_s: float = 0.4) -> DeskFixture:
    """Single-word corpus, chunked sentence corpus and two disjoint noise banks.

    Pre-task and main-task words are spoken by disjoint speaker pools; the
    sentence corpus uses its own vocabulary and readers.  The training and
    evaluation noise banks share categories but not recordings.
    """
    from .corpus import chunk_by_manifest, filter_min_duration

    vocab = make_vocabulary(tuple(pretask_words) + tuple(maintask_words), seed)
    pre = [w for w in vocab if w.name in pretask_words]
    main = [w for w in vocab if w.name in maintask_words]
    cp = build_single_word_corpus(pre, pretask_per_word, seed, speaker_prefix="spk")
    cm = build_single_word_corpus(main, maintask_per_word, derive_seed(seed, "main"),
                                  speaker_prefix="mspk")
    library = make_vocabulary([f"lw{i:02d}" for i in range(n_long_words)], derive_seed(seed, "lib"))
    audio, rows = build_long_audio(library, n_sentences, derive_seed(seed, "long"))
    chunked = filter_min_duration(chunk_by_manifest(audio, rows), min_chunk_s)
    return DeskFixture(Corpus(list(cp) + list(cm)), chunked, rows, audio,
                       build_noise_bank(derive_seed(seed, "train-noise")),
                       build_noise_bank(derive_seed(seed, "eval-noise")),
                       tuple(pretask_words), tuple(maintask_words))
