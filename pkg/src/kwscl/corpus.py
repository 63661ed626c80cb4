"""Utterance corpora: ingest, chunking, label sealing and partitioning."""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import CANONICAL_RATE
from .audio_io import AudioClip, AudioError, load_wav, to_canonical
from .augment import AugmentSpec
from .seeding import rng_for

log = logging.getLogger(__name__)

SINGLE_WORD = "single_word_corpus"
CHUNKED = "chunked_long_audio"
SET_TAGS = ("none", "set1", "set2")
DEFAULT_MIN_DURATION_S = 0.4


class CorpusError(ValueError):
    pass


class LabelSealError(RuntimeError):
    """A word label was requested from a label-sealed corpus."""


@dataclass(frozen=True)
class Utterance:
    id: str
    word: Optional[str] = None
    speaker: Optional[str] = None
    source: str = SINGLE_WORD
    set_tag: str = "none"
    variant: Optional[AugmentSpec] = None
    path: Optional[str] = None
    clip: Optional[AudioClip] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.set_tag not in SET_TAGS:
            raise CorpusError(f"bad set tag {self.set_tag!r}")
        if self.source not in (SINGLE_WORD, CHUNKED):
            raise CorpusError(f"bad source {self.source!r}")

    def to_record(self) -> dict:
        rec = {"id": self.id, "source": self.source, "set_tag": self.set_tag,
               "variant": self.variant.to_dict() if self.variant else "clean",
               "path": self.path}
        if self.word is not None:
            rec["word"] = self.word
        if self.speaker is not None:
            rec["speaker"] = self.speaker
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "Utterance":
        variant = rec.get("variant", "clean")
        return cls(id=rec["id"], word=rec.get("word"), speaker=rec.get("speaker"),
                   source=rec.get("source", SINGLE_WORD), set_tag=rec.get("set_tag", "none"),
                   variant=None if variant == "clean" else AugmentSpec.from_dict(variant),
                   path=rec.get("path"))


class Corpus:
    """Immutable ordered collection of utterances with unique ids."""

    sealed = False

    def __init__(self, utterances: Iterable[Utterance], skipped: int = 0):
        self._utts: Tuple[Utterance, ...] = tuple(utterances)
        self._index: Dict[str, int] = {}
        for i, u in enumerate(self._utts):
            if u.id in self._index:
                raise CorpusError(f"duplicate utterance id {u.id!r}")
            self._index[u.id] = i
        self.skipped = skipped
        self._audio_cache: Dict[str, AudioClip] = {}

    def __len__(self) -> int:
        return len(self._utts)

    def __iter__(self) -> Iterator[Utterance]:
        return iter(self._utts)

    def __getitem__(self, utt_id: str) -> Utterance:
        return self._utts[self._index[utt_id]]

    def __contains__(self, utt_id: str) -> bool:
        return utt_id in self._index

    @property
    def ids(self) -> List[str]:
        return [u.id for u in self._utts]

    def words(self) -> List[str]:
        return sorted({u.word for u in self._utts if u.word is not None})

    def audio(self, utt_id: str) -> AudioClip:
        u = self._utts[self._index[utt_id]]
        if u.clip is not None:
            return u.clip
        if utt_id not in self._audio_cache:
            if u.path is None:
                raise CorpusError(f"utterance {utt_id!r} has neither clip nor path")
            self._audio_cache[utt_id] = to_canonical(load_wav(u.path))
        return self._audio_cache[utt_id]

    def duration(self, utt_id: str) -> float:
        return self.audio(utt_id).duration

    def _derive(self, utterances: Iterable[Utterance]) -> "Corpus":
        out = Corpus(utterances)
        out._audio_cache = self._audio_cache
        return out

    def select(self, ids: Iterable[str]) -> "Corpus":
        return self._derive(self[i] for i in ids)

    def retag(self, set_tag: str) -> "Corpus":
        return self._derive(replace(u, set_tag=set_tag) for u in self._utts)

    def with_tags(self, tags: Mapping[str, str]) -> "Corpus":
        """Copy with per-utterance set tags; ids absent from ``tags`` keep theirs."""
        return self._derive(replace(u, set_tag=tags.get(u.id, u.set_tag)) for u in self._utts)

    def seal(self) -> "SealedCorpus":
        return SealedCorpus(self)


class _Counter:
    def __init__(self):
        self.value = 0


class SealedUtterance:
    """Read-only view of an utterance whose word label cannot be read."""

    __slots__ = ("_utt", "_counter")

    def __init__(self, utt: Utterance, counter: _Counter):
        self._utt = utt
        self._counter = counter

    id = property(lambda self: self._utt.id)
    speaker = property(lambda self: self._utt.speaker)
    source = property(lambda self: self._utt.source)
    set_tag = property(lambda self: self._utt.set_tag)
    variant = property(lambda self: self._utt.variant)
    path = property(lambda self: self._utt.path)

    @property
    def word(self):
        self._counter.value += 1
        raise LabelSealError(f"labels of {self._utt.id!r} are sealed")

    def to_record(self) -> dict:
        rec = self._utt.to_record()
        rec.pop("word", None)
        rec["sealed"] = True
        return rec


class SealedCorpus:
    """Corpus view for self-supervised training; any label read is counted and refused."""

    sealed = True

    def __init__(self, corpus: Corpus, counter: Optional[_Counter] = None):
        self._corpus = corpus
        self._counter = counter or _Counter()

    @property
    def label_reads(self) -> int:
        return self._counter.value

    def __len__(self) -> int:
        return len(self._corpus)

    def __iter__(self) -> Iterator[SealedUtterance]:
        return (SealedUtterance(u, self._counter) for u in self._corpus)

    def __getitem__(self, utt_id: str) -> SealedUtterance:
        return SealedUtterance(self._corpus[utt_id], self._counter)

    def __contains__(self, utt_id: str) -> bool:
        return utt_id in self._corpus

    @property
    def ids(self) -> List[str]:
        return self._corpus.ids

    def words(self):
        self._counter.value += 1
        raise LabelSealError("labels of this corpus are sealed")

    def audio(self, utt_id: str) -> AudioClip:
        return self._corpus.audio(utt_id)

    def duration(self, utt_id: str) -> float:
        return self._corpus.duration(utt_id)

    def select(self, ids: Iterable[str]) -> "SealedCorpus":
        return SealedCorpus(self._corpus.select(ids), self._counter)

    def retag(self, set_tag: str) -> "SealedCorpus":
        return SealedCorpus(self._corpus.retag(set_tag), self._counter)

    def with_tags(self, tags: Mapping[str, str]) -> "SealedCorpus":
        return SealedCorpus(self._corpus.with_tags(tags), self._counter)

    def seal(self) -> "SealedCorpus":
        return self


def _speaker_from_name(stem: str) -> Optional[str]:
    # GSC naming: <speaker>_nohash_<n>
    return stem.split("_nohash_")[0] if "_nohash_" in stem else None


def ingest_single_word_corpus(root: str | os.PathLike) -> Corpus:
    """One clean utterance per ``<root>/<word>/<file>.wav``, resampled to 16 kHz."""
    root = Path(root)
    if not root.is_dir():
        raise CorpusError(f"{root} is not a directory")
    utts, skipped = [], 0
    for word_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for wav in sorted(word_dir.glob("*.wav")):
            try:
                clip = to_canonical(load_wav(wav))
            except AudioError as exc:
                log.warning("skipping %s: %s", wav, exc)
                skipped += 1
                continue
            utts.append(Utterance(id=f"{word_dir.name}/{wav.stem}", word=word_dir.name,
                                  speaker=_speaker_from_name(wav.stem), source=SINGLE_WORD,
                                  path=str(wav), clip=clip))
    if not utts:
        raise CorpusError(f"no readable utterances under {root} ({skipped} skipped)")
    if skipped:
        log.warning("%d unreadable files skipped under %s", skipped, root)
    return Corpus(utts, skipped=skipped)


@dataclass(frozen=True)
class AlignmentRow:
    audio_id: str
    word: str
    start_s: float
    end_s: float


def read_alignment_tsv(path: str | os.PathLike) -> List[AlignmentRow]:
    """Rows of ``audio_id<TAB>word<TAB>start_s<TAB>end_s``."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh, delimiter="\t"), 1):
            if not rec or rec[0].startswith("#"):
                continue
            if len(rec) != 4:
                raise CorpusError(f"{path}:{lineno}: expected 4 fields, got {len(rec)}")
            rows.append(AlignmentRow(rec[0], rec[1], float(rec[2]), float(rec[3])))
    return rows


def write_alignment_tsv(path: str | os.PathLike, rows: Iterable[AlignmentRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        for r in rows:
            writer.writerow([r.audio_id, r.word, f"{r.start_s:.4f}", f"{r.end_s:.4f}"])


def chunk_by_manifest(audio: Mapping[str, AudioClip], rows: Sequence[AlignmentRow]) -> Corpus:
    """Cut one utterance per alignment row; samples are ``audio[start, end)``."""
    utts = []
    for i, r in enumerate(rows):
        if r.audio_id not in audio:
            raise CorpusError(f"alignment row {i}: unknown audio id {r.audio_id!r}")
        clip = audio[r.audio_id]
        if not (0.0 <= r.start_s < r.end_s <= clip.duration + 1e-9):
            raise CorpusError(f"alignment row {i}: [{r.start_s}, {r.end_s}) outside "
                              f"[0, {clip.duration}] of {r.audio_id!r}")
        i0 = int(round(r.start_s * clip.sample_rate))
        i1 = min(int(round(r.end_s * clip.sample_rate)), len(clip))
        utts.append(Utterance(id=f"{r.audio_id}#{i:05d}", word=r.word, source=CHUNKED,
                              clip=clip.with_samples(clip.samples[i0:i1])))
    return Corpus(utts)


@dataclass(frozen=True)
class VadParams:
    frame_s: float = 0.010
    floor_percentile: float = 10.0
    margin_db: float = 9.0
    min_on: int = 5
    hangover: int = 3
    max_floor_db: float = -60.0


def chunk_by_vad(clip: AudioClip, params: VadParams = VadParams()) -> List[Tuple[float, float]]:
    """Energy VAD; returns sorted, non-overlapping ``(start_s, end_s)`` segments."""
    hop = int(round(params.frame_s * clip.sample_rate))
    n_frames = len(clip) // hop
    if n_frames == 0:
        return []
    frames = clip.samples[:n_frames * hop].reshape(n_frames, hop)
    energy_db = 10.0 * np.log10(np.mean(frames ** 2, axis=1) + 1e-20)
    floor = float(np.percentile(energy_db, params.floor_percentile))
    if float(np.max(energy_db)) - floor < params.margin_db:
        # no dynamic range: wholly active or wholly quiet, decided by absolute level
        floor = min(floor, params.max_floor_db)
    active = energy_db > floor + params.margin_db

    segments: List[Tuple[int, int]] = []
    i = 0
    while i < n_frames:
        if not active[i]:
            i += 1
            continue
        j = i
        while j < n_frames and active[j]:
            j += 1
        if j - i >= params.min_on:
            end = min(j + params.hangover, n_frames)
            if segments and i <= segments[-1][1]:
                segments[-1] = (segments[-1][0], end)
            else:
                segments.append((i, end))
        i = j
    sr = clip.sample_rate
    return [(a * hop / sr, min(b * hop, len(clip)) / sr) for a, b in segments]


def filter_min_duration(corpus, min_s: float = DEFAULT_MIN_DURATION_S):
    """Keep utterances lasting at least ``min_s`` seconds, order preserved."""
    if min_s < 0:
        raise CorpusError("min_s must be non-negative")
    return corpus.select([i for i in corpus.ids if corpus.duration(i) >= min_s - 1e-12])


@dataclass(frozen=True)
class SplitPlan:
    pretask_words: Tuple[str, ...] = ()
    maintask_words: Tuple[str, ...] = ()
    train_fraction: float = 0.8
    set1_fraction: float = 0.3
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "pretask_words", tuple(self.pretask_words))
        object.__setattr__(self, "maintask_words", tuple(self.maintask_words))
        overlap = set(self.pretask_words) & set(self.maintask_words)
        if overlap:
            raise CorpusError(f"pre-task and main-task words overlap: {sorted(overlap)}")
        for name in ("train_fraction", "set1_fraction"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise CorpusError(f"{name} must be in (0, 1), got {v}")


@dataclass
class Partition:
    pretask_train: object
    set1: object
    set2: object
    maintask_train: Corpus
    maintask_test: Corpus
    unused: Corpus


def _split_count(n: int, fraction: float) -> int:
    if n < 2:
        return n
    return min(max(int(round(fraction * n)), 1), n - 1)


def partition(corpus, plan: SplitPlan) -> Partition:
    """Split into pre-task (with set-1/set-2) and main-task train/test groups.

    Sealed corpora are split per utterance and never consult labels; labelled
    corpora assign whole words to set-1/set-2 and split the main task per word.
    """
    if corpus.sealed:
        ids = list(corpus.ids)
        order = rng_for(plan.seed, "set-split").permutation(len(ids))
        n1 = int(round(plan.set1_fraction * len(ids)))
        set1_ids = {ids[k] for k in order[:n1]}
        tagged = corpus.with_tags({i: "set1" if i in set1_ids else "set2" for i in ids})
        set1 = tagged.select([i for i in ids if i in set1_ids])
        set2 = tagged.select([i for i in ids if i not in set1_ids])
        empty = Corpus([])
        return Partition(tagged, set1, set2, empty, empty, empty)

    words = set(corpus.words())
    missing = (set(plan.pretask_words) | set(plan.maintask_words)) - words
    if missing:
        raise CorpusError(f"plan words not in corpus: {sorted(missing)}")
    pre, main, unused = set(plan.pretask_words), set(plan.maintask_words), []
    for u in corpus:
        if u.word not in pre and u.word not in main:
            unused.append(u.id)

    pretask = corpus.select([u.id for u in corpus if u.word in pre])
    pre_words = list(plan.pretask_words)
    order = rng_for(plan.seed, "word-split").permutation(len(pre_words))
    n1 = _split_count(len(pre_words), plan.set1_fraction)
    set1_words = {pre_words[k] for k in order[:n1]}
    pretask = pretask.with_tags({u.id: "set1" if u.word in set1_words else "set2" for u in pretask})
    set1 = pretask.select([u.id for u in pretask if u.word in set1_words])
    set2 = pretask.select([u.id for u in pretask if u.word not in set1_words])

    train_ids, test_ids = set(), set()
    for w in plan.maintask_words:
        ids = [u.id for u in corpus if u.word == w]
        perm = rng_for(plan.seed, "train-test", w).permutation(len(ids))
        n_train = _split_count(len(ids), plan.train_fraction)
        train_ids.update(ids[k] for k in perm[:n_train])
        test_ids.update(ids[k] for k in perm[n_train:])
    main_train = corpus.select([i for i in corpus.ids if i in train_ids])
    main_test = corpus.select([i for i in corpus.ids if i in test_ids])
    return Partition(pretask, set1, set2, main_train, main_test, corpus.select(unused))


def pad_or_crop_clip(clip: AudioClip, target_s: float = 1.0) -> AudioClip:
    """Centre-crop or symmetrically zero-pad to exactly ``target_s`` seconds."""
    if target_s <= 0:
        raise ValueError("target_s must be positive")
    target = int(round(target_s * clip.sample_rate))
    x, n = clip.samples, len(clip)
    if n == target:
        return clip
    if n > target:
        start = (n - target) // 2
        return clip.with_samples(x[start:start + target])
    left = (target - n) // 2
    out = np.zeros(target)
    out[left:left + n] = x
    return clip.with_samples(out)


def pad_or_crop(utt: Utterance, corpus, target_s: float = 1.0) -> Utterance:
    clip = pad_or_crop_clip(corpus.audio(utt.id), target_s)
    return replace(utt, clip=clip)


def write_corpus_manifest(path: str | os.PathLike, corpus) -> None:
    with open(path, "w") as fh:
        for u in corpus:
            fh.write(json.dumps(u.to_record(), sort_keys=True) + "\n")


def read_corpus_manifest(path: str | os.PathLike):
    """Load a JSON-lines corpus manifest; sealed records yield a :class:`SealedCorpus`."""
    utts, sealed = [], set()
    base = Path(path).parent
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                sealed.add(bool(rec.get("sealed", False)))
                u = Utterance.from_record(rec)
            except (KeyError, TypeError, ValueError) as exc:
                raise CorpusError(f"{path}:{lineno}: bad record ({exc})") from exc
            if u.path is not None and not os.path.isabs(u.path):
                u = replace(u, path=str(base / u.path))
            utts.append(u)
    if len(sealed) > 1:
        raise CorpusError(f"{path}: mixes sealed and unsealed records")
    corpus = Corpus(utts)
    return corpus.seal() if sealed == {True} else corpus


__all__ = [
    "Utterance", "Corpus", "SealedCorpus", "SealedUtterance", "LabelSealError", "CorpusError",
    "ingest_single_word_corpus", "AlignmentRow", "read_alignment_tsv", "write_alignment_tsv",
    "chunk_by_manifest", "VadParams", "chunk_by_vad", "filter_min_duration", "SplitPlan",
    "Partition", "partition", "pad_or_crop", "pad_or_crop_clip", "write_corpus_manifest",
    "read_corpus_manifest", "CANONICAL_RATE",
]
