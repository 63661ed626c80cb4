"""Positive/negative pair generation for contrastive pre-training.

Four strategies:

* ``SC``   supervised: same word is positive, different word is negative.
* ``PSC``  pseudo-supervised: words split into two sets; positives are
  set-1 self-augmentations, negatives pair set-1 with set-2.
* ``SSC``  self-supervised on chunked audio: like PSC but the sets come from
  a per-utterance split of a label-sealed corpus.
* ``SSHN`` self-supervised with hard negatives: negatives are any other
  utterance from the same shuffled batch.

In every pair the ``a`` side is a clean utterance; ``b`` may carry an
augmentation spec.
"""

from __future__ import annotations

import hashlib
import json
import os
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .augment import KINDS, AugmentSpec, sample_spec
from .corpus import LabelSealError
from .seeding import derive_seed, rng_for

POSITIVE = "positive"
NEGATIVE = "negative"
STRATEGIES = ("SC", "PSC", "SSC", "SSHN")


class PairingError(ValueError):
    pass


@dataclass(frozen=True)
class Pair:
    a_id: str
    b_id: str
    polarity: str
    strategy: str
    aug_spec_b: Optional[AugmentSpec] = None
    batch: Optional[int] = None

    def to_record(self) -> dict:
        rec = {"a_id": self.a_id, "b_id": self.b_id, "polarity": self.polarity,
               "strategy": self.strategy}
        if self.aug_spec_b is not None:
            rec["aug_spec_b"] = self.aug_spec_b.to_dict()
        if self.batch is not None:
            rec["batch"] = self.batch
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "Pair":
        aug = rec.get("aug_spec_b")
        return cls(rec["a_id"], rec["b_id"], rec["polarity"], rec["strategy"],
                   AugmentSpec.from_dict(aug) if aug else None, rec.get("batch"))


@dataclass(frozen=True)
class PairPlanConfig:
    pos_per_utterance: int = 2
    neg_per_utterance: int = 2
    include_augmented_negatives: bool = True
    seed: int = 0
    noise_ids: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.pos_per_utterance < 1 or self.neg_per_utterance < 1:
            raise PairingError("pair counts per utterance must be >= 1")
        object.__setattr__(self, "noise_ids", tuple(self.noise_ids))


class _Sampler:
    """Per-utterance random stream plus augmentation drawing."""

    def __init__(self, cfg: PairPlanConfig, strategy: str, utt_id: str):
        self.cfg = cfg
        self.key = (strategy, utt_id)
        self.rng = rng_for(cfg.seed, strategy, utt_id)
        self.count = 0

    def _spec(self, kinds) -> AugmentSpec:
        self.count += 1
        return sample_spec(self.rng, derive_seed(self.cfg.seed, *self.key, self.count),
                           self.cfg.noise_ids, kinds)

    def positive_aug(self) -> AugmentSpec:
        return self._spec(KINDS)

    def negative_aug(self) -> Optional[AugmentSpec]:
        if not (self.cfg.include_augmented_negatives and self.cfg.noise_ids):
            return None
        return self._spec(("noise",)) if self.rng.random() < 0.5 else None

    def choose(self, pool: Sequence[str], k: int) -> List[str]:
        if not pool:
            return []
        k = min(k, len(pool))
        return [pool[i] for i in self.rng.choice(len(pool), size=k, replace=False)]


def gen_supervised(corpus, cfg: PairPlanConfig) -> List[Pair]:
    """Same-word positives (other speaker or self-augmentation, 50/50) and cross-word negatives."""
    by_word: Dict[str, List] = defaultdict(list)
    for u in corpus:
        if u.word is None:
            raise PairingError(f"utterance {u.id!r} is unlabelled")
        by_word[u.word].append(u)
    if len(by_word) < 2:
        raise PairingError("supervised pairing needs at least two words")
    others = {w: [v.id for v in corpus if v.word != w] for w in sorted(by_word)}

    pairs = []
    for u in corpus:
        s = _Sampler(cfg, "SC", u.id)
        same = [v for v in by_word[u.word] if v.id != u.id]
        other_spk = [v.id for v in same
                     if u.speaker is None or v.speaker is None or v.speaker != u.speaker]
        pool = other_spk or [v.id for v in same]
        candidates = s.choose(pool, cfg.pos_per_utterance)
        for _ in range(cfg.pos_per_utterance):
            if candidates and s.rng.random() < 0.5:
                v = candidates.pop()
                aug = s.positive_aug() if s.rng.random() < 0.5 else None
                pairs.append(Pair(u.id, v, POSITIVE, "SC", aug))
            else:
                pairs.append(Pair(u.id, u.id, POSITIVE, "SC", s.positive_aug()))
        for v in s.choose(others[u.word], cfg.neg_per_utterance):
            pairs.append(Pair(u.id, v, NEGATIVE, "SC", s.negative_aug()))
    return pairs


def _set_pairs(set1: Sequence[str], set2: Sequence[str], cfg: PairPlanConfig,
               strategy: str) -> List[Pair]:
    if not set1 or not set2:
        raise PairingError(f"{strategy}: set-1 and set-2 must both be non-empty")
    pairs = []
    for u in set1:
        s = _Sampler(cfg, strategy, u)
        for _ in range(cfg.pos_per_utterance):
            pairs.append(Pair(u, u, POSITIVE, strategy, s.positive_aug()))
        for v in s.choose(set2, cfg.neg_per_utterance):
            pairs.append(Pair(u, v, NEGATIVE, strategy, s.negative_aug()))
    return pairs


def gen_pseudo_supervised(corpus, word_sets: Tuple[Sequence[str], Sequence[str]],
                          cfg: PairPlanConfig) -> List[Pair]:
    set1_words, set2_words = set(word_sets[0]), set(word_sets[1])
    if set1_words & set2_words:
        raise PairingError("PSC word sets overlap")
    uncovered = set(corpus.words()) - set1_words - set2_words
    if uncovered:
        raise PairingError(f"PSC word sets do not cover corpus words {sorted(uncovered)}")
    set1 = [u.id for u in corpus if u.word in set1_words]
    set2 = [u.id for u in corpus if u.word in set2_words]
    return _set_pairs(set1, set2, cfg, "PSC")


def gen_self_supervised_chunked(corpus, cfg: PairPlanConfig) -> List[Pair]:
    """Set-based pairing on a label-sealed corpus; only ``set_tag`` is consulted."""
    if not getattr(corpus, "sealed", False):
        raise LabelSealError("SSC pairing requires a label-sealed corpus")
    set1 = [u.id for u in corpus if u.set_tag == "set1"]
    set2 = [u.id for u in corpus if u.set_tag == "set2"]
    return _set_pairs(set1, set2, cfg, "SSC")


def gen_self_supervised_hard_negative(corpus, batch_size: int = 64,
                                      cfg: PairPlanConfig = PairPlanConfig()) -> List[Pair]:
    if batch_size < 2:
        raise PairingError("batch_size must be >= 2")
    ids = list(corpus.ids)
    order = rng_for(cfg.seed, "SSHN", "shuffle").permutation(len(ids))
    batches = [[ids[k] for k in order[i:i + batch_size]] for i in range(0, len(ids), batch_size)]
    if len(batches) > 1 and len(batches[-1]) < 2:
        batches[-2].extend(batches.pop())
    pairs = []
    for b_idx, batch in enumerate(batches):
        for u in batch:
            s = _Sampler(cfg, "SSHN", u)
            for _ in range(cfg.pos_per_utterance):
                pairs.append(Pair(u, u, POSITIVE, "SSHN", s.positive_aug(), b_idx))
            for v in s.choose([v for v in batch if v != u], cfg.neg_per_utterance):
                pairs.append(Pair(u, v, NEGATIVE, "SSHN", s.negative_aug(), b_idx))
    return pairs


def admissibility_violations(pairs: Sequence[Pair], words: Optional[Dict[str, str]] = None,
                             sets: Optional[Dict[str, str]] = None) -> List[str]:
    """Check every pair against its strategy's rules; returns human-readable violations.

    ``words`` maps utterance id to word (SC); ``sets`` maps id to
    ``set1``/``set2`` (PSC, SSC).  SSHN needs neither.
    """
    bad = []
    batch_of: Dict[str, int] = {}
    for p in pairs:
        if p.strategy == "SSHN" and p.polarity == POSITIVE:
            batch_of[p.a_id] = p.batch
    for k, p in enumerate(pairs):
        self_aug = p.a_id == p.b_id and p.aug_spec_b is not None
        if p.a_id == p.b_id and p.aug_spec_b is None:
            bad.append(f"#{k}: identical clean ends")
        if p.strategy == "SC":
            same = words[p.a_id] == words[p.b_id]
            if (p.polarity == POSITIVE) != same:
                bad.append(f"#{k}: SC {p.polarity} with words "
                           f"{words[p.a_id]!r}/{words[p.b_id]!r}")
        elif p.strategy in ("PSC", "SSC"):
            if p.polarity == POSITIVE and not (self_aug and sets[p.a_id] == "set1"):
                bad.append(f"#{k}: {p.strategy} positive is not a set-1 self-augmentation")
            if p.polarity == NEGATIVE and (sets[p.a_id], sets[p.b_id]) != ("set1", "set2"):
                bad.append(f"#{k}: {p.strategy} negative joins {sets[p.a_id]} and {sets[p.b_id]}")
        elif p.strategy == "SSHN":
            if p.polarity == POSITIVE and not self_aug:
                bad.append(f"#{k}: SSHN positive is not a self-augmentation")
            if p.polarity == NEGATIVE:
                if p.a_id == p.b_id:
                    bad.append(f"#{k}: SSHN negative pairs an utterance with itself")
                if not (p.batch == batch_of.get(p.a_id) == batch_of.get(p.b_id)):
                    bad.append(f"#{k}: SSHN negative crosses batches")
        else:
            bad.append(f"#{k}: unknown strategy {p.strategy!r}")
    return bad


def write_manifest(path: str | os.PathLike, pairs: Sequence[Pair]) -> None:
    with open(path, "w") as fh:
        for p in pairs:
            fh.write(json.dumps(p.to_record(), sort_keys=True) + "\n")


def read_manifest(path: str | os.PathLike) -> List[Pair]:
    with open(path) as fh:
        return [Pair.from_record(json.loads(line)) for line in fh if line.strip()]


def manifest_hash(pairs: Sequence[Pair]) -> str:
    h = hashlib.sha256()
    for p in pairs:
        h.update(json.dumps(p.to_record(), sort_keys=True).encode())
        h.update(b"\n")
    return h.hexdigest()


def hard_negative_fraction(pairs: Sequence[Pair], words: Dict[str, str]) -> float:
    negs = [p for p in pairs if p.polarity == NEGATIVE]
    if not negs:
        return float("nan")
    return float(np.mean([words[p.a_id] == words[p.b_id] for p in negs]))
