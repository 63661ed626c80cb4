"""Contrastive pre-training, classifier training/transfer and noisy evaluation."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import augment as aug
from .augment import AugmentSpec, NoiseBank
from .corpus import pad_or_crop_clip
from .dsp import mfcc
from .nn import autodiff as ad
from .nn.model import Model, TrunkConfig, save_checkpoint
from .nn.optim import make_optimizer
from .pairing import POSITIVE, Pair, manifest_hash
from .seeding import derive_seed, rng_for

log = logging.getLogger(__name__)

EPOCHS_RANDOM_INIT = 15
EPOCHS_FROM_CLASSIFIER = 10
EPOCHS_FROM_CONTRASTIVE = 6
EPOCHS_PRETRAIN = 3
CAR = "car"
OTHER_NOISES = ("cafe", "babble", "music", "kitchen")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    epochs: int = EPOCHS_PRETRAIN
    learning_rate: float = 1e-3
    finetune_lr_factor: float = 0.1
    optimizer: str = "adam"
    freeze_base: bool = False
    seed: int = 0
    label_convention: str = ad.SIMILAR_IS_1
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0 < self.finetune_lr_factor <= 1:
            raise ValueError("finetune_lr_factor must be in (0, 1]")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class RunRecord:
    kind: str
    config_hash: str
    seed: int
    train_loss: List[float] = field(default_factory=list)
    train_acc: List[float] = field(default_factory=list)
    val_acc: List[Optional[float]] = field(default_factory=list)
    wall_time_s: float = 0.0
    extra: Dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


class FeatureStore:
    """MFCC matrices for corpus utterances; clean ones are cached."""

    def __init__(self, corpus, noise_bank: Optional[NoiseBank] = None, target_s: float = 1.0,
                 normalize: bool = False):
        self.corpus = corpus
        self.noise_bank = noise_bank
        self.target_s = target_s
        self.normalize = normalize
        self._clean: Dict[str, np.ndarray] = {}

    def clip(self, utt_id: str):
        return pad_or_crop_clip(self.corpus.audio(utt_id), self.target_s)

    def clean(self, utt_id: str) -> np.ndarray:
        if utt_id not in self._clean:
            self._clean[utt_id] = mfcc(self.clip(utt_id), self.normalize).astype(np.float32)
        return self._clean[utt_id]

    def render(self, utt_id: str, spec: Optional[AugmentSpec] = None) -> np.ndarray:
        if spec is None:
            return self.clean(utt_id)
        clip = aug.apply(self.clip(utt_id), spec, self.noise_bank)
        return mfcc(clip, self.normalize).astype(np.float32)

    def stack(self, ids: Sequence[str], specs: Optional[Sequence[Optional[AugmentSpec]]] = None):
        specs = specs if specs is not None else [None] * len(ids)
        if not ids:
            return np.zeros((0,) + self._shape(), dtype=np.float32)
        return np.stack([self.render(i, s) for i, s in zip(ids, specs)])

    def _shape(self):
        n = int(round(self.target_s * 16000))
        return (1 + (n - 400) // 160, 40)


def _check_finite(loss: ad.Tensor, epoch: int, batch: int):
    if not np.isfinite(loss.data):
        raise TrainingError(f"non-finite loss at epoch {epoch}, batch {batch}")


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def pretrain_contrastive(pairs: Sequence[Pair], store: FeatureStore, cfg: TrainConfig,
                         trunk: TrunkConfig = TrunkConfig(), init: Optional[Model] = None,
                         out_path: Optional[str] = None, strategy: Optional[str] = None
                         ) -> Tuple[Model, RunRecord]:
    """Train the siamese embedding network on a pair manifest."""
    if not pairs:
        raise TrainingError("empty pair manifest")
    if cfg.freeze_base:
        raise TrainingError("contrastive pre-training cannot freeze the base")
    start = time.perf_counter()
    model = init.with_head(None, 0) if init is not None else Model.init(
        trunk, derive_seed(cfg.seed, "init", "pretrain"))
    model.set_trainable(model.names())
    opt = make_optimizer(cfg.optimizer, model.params, cfg.learning_rate)

    a_feats = store.stack([p.a_id for p in pairs])
    b_feats = store.stack([p.b_id for p in pairs], [p.aug_spec_b for p in pairs])
    targets = ad.pair_targets([p.polarity == POSITIVE for p in pairs], cfg.label_convention)
    if init is None:
        model.adapt(a_feats)

    rec = RunRecord("pretrain_contrastive", cfg.digest(), cfg.seed)
    rng = rng_for(cfg.seed, "pretrain", "order")
    for epoch in range(cfg.epochs):
        losses, correct = [], 0
        for b, idx in enumerate(_batches(len(pairs), cfg.batch_size, rng)):
            emb = model.embed(np.concatenate([a_feats[idx], b_feats[idx]]))
            n = len(idx)
            left, right = ad.rows(emb, 0, n), ad.rows(emb, n, 2 * n)
            loss = ad.siamese_bce(left, right, targets[idx])
            _check_finite(loss, epoch, b)
            ad.backward(loss, model.params.values())
            opt.step()
            losses.append(float(loss.data))
            d = np.exp(-np.abs(left.data - right.data).sum(axis=1))
            correct += int(np.sum((d > 0.5) == (targets[idx] > 0.5)))
        rec.train_loss.append(float(np.mean(losses)))
        rec.train_acc.append(correct / len(pairs))
        rec.val_acc.append(None)
        log.info("pretrain epoch %d loss %.4f acc %.3f", epoch, rec.train_loss[-1], rec.train_acc[-1])
    rec.wall_time_s = time.perf_counter() - start
    rec.extra = {"strategy": strategy or (pairs[0].strategy if pairs else None),
                 "manifest_hash": manifest_hash(pairs), "n_pairs": len(pairs)}
    if out_path is not None:
        save_checkpoint(out_path, model, {"stage": "pretrain", "config": asdict(cfg), **rec.extra})
    return model, rec


@dataclass
class Task:
    """Labelled main-task data: utterance ids and class indices for train and test."""
    name: str
    classes: Tuple[str, ...]
    train_ids: List[str]
    train_labels: List[int]
    test_ids: List[str]
    test_labels: List[int]


def _split_class(ids: List[str], fraction: float, rng) -> Tuple[List[str], List[str]]:
    perm = rng.permutation(len(ids))
    n_train = int(round(fraction * len(ids)))
    if len(ids) >= 2:
        n_train = min(max(n_train, 1), len(ids) - 1)
    return [ids[k] for k in sorted(perm[:n_train])], [ids[k] for k in sorted(perm[n_train:])]


def make_one_vs_all_task(corpus, target_word: str, seed: int = 0,
                         train_fraction: float = 0.8) -> Task:
    """Target-word utterances against an equal-sized sample of every other word."""
    pos = [u.id for u in corpus if u.word == target_word]
    if not pos:
        raise ValueError(f"target word {target_word!r} not in corpus")
    others: Dict[str, List[str]] = {}
    for u in corpus:
        if u.word != target_word:
            others.setdefault(u.word, []).append(u.id)
    rng = rng_for(seed, "onevsall", target_word)
    pools = {w: [ids[k] for k in rng.permutation(len(ids))] for w, ids in sorted(others.items())}
    neg: List[str] = []
    while len(neg) < len(pos) and any(pools.values()):
        for w in sorted(pools):
            if pools[w] and len(neg) < len(pos):
                neg.append(pools[w].pop())
    tr_p, te_p = _split_class(pos, train_fraction, rng_for(seed, "onevsall-split", "pos"))
    tr_n, te_n = _split_class(neg, train_fraction, rng_for(seed, "onevsall-split", "neg"))
    return Task(f"onevsall:{target_word}", ("other", target_word),
                tr_n + tr_p, [0] * len(tr_n) + [1] * len(tr_p),
                te_n + te_p, [0] * len(te_n) + [1] * len(te_p))


def make_multiclass_task(corpus, words: Sequence[str], seed: int = 0,
                         train_fraction: float = 0.8) -> Task:
    train_ids, train_labels, test_ids, test_labels = [], [], [], []
    for k, w in enumerate(words):
        ids = [u.id for u in corpus if u.word == w]
        if not ids:
            raise ValueError(f"word {w!r} not in corpus")
        tr, te = _split_class(ids, train_fraction, rng_for(seed, "multiclass-split", w))
        train_ids += tr
        train_labels += [k] * len(tr)
        test_ids += te
        test_labels += [k] * len(te)
    return Task("multi", tuple(words), train_ids, train_labels, test_ids, test_labels)


def _accuracy(model: Model, x: np.ndarray, y: np.ndarray) -> float:
    if len(y) == 0:
        return float("nan")
    return float(np.mean(model.predict(x) == y))


def train_classifier(x: np.ndarray, y: Sequence[int], num_classes: int, cfg: TrainConfig,
                     init: Optional[Model] = None, keep_head: bool = False,
                     trunk: TrunkConfig = TrunkConfig()) -> Tuple[Model, RunRecord]:
    """Softmax classifier training.

    ``init=None`` trains from random initialisation at the base learning rate.
    Otherwise the final layer is replaced (unless ``keep_head``) and either
    only the dense layers train (``cfg.freeze_base``) or every parameter trains
    at ``learning_rate * finetune_lr_factor``.
    """
    start = time.perf_counter()
    y = np.asarray(y, dtype=np.int64)
    if init is None:
        model = Model.init(trunk, derive_seed(cfg.seed, "init", "classifier"), num_classes)
        trainable, lr = model.names(), cfg.learning_rate
    else:
        if keep_head:
            if init.num_classes != num_classes:
                raise TrainingError("kept head does not match the number of classes")
            model = Model(init.config, init.state(), num_classes, init.dtype)
        else:
            model = init.with_head(num_classes, derive_seed(cfg.seed, "init", "head"))
        if cfg.freeze_base:
            trainable, lr = model.names(include_conv=False), cfg.learning_rate
        else:
            trainable, lr = model.names(), cfg.learning_rate * cfg.finetune_lr_factor
    model.set_trainable(trainable)
    opt = make_optimizer(cfg.optimizer, model.params, lr)

    rng = rng_for(cfg.seed, "classifier", "val")
    n_val = int(round(cfg.val_fraction * len(y))) if len(y) > 10 else 0
    perm = rng.permutation(len(y))
    val_idx, tr_idx = np.sort(perm[:n_val]), np.sort(perm[n_val:])
    x_tr, y_tr, x_val, y_val = x[tr_idx], y[tr_idx], x[val_idx], y[val_idx]
    if init is None:
        model.adapt(x_tr)
    if not keep_head:
        model.adapt_head(x_tr)

    rec = RunRecord("train_classifier", cfg.digest(), cfg.seed,
                    extra={"init": "random" if init is None else "checkpoint",
                           "freeze_base": bool(cfg.freeze_base and init is not None),
                           "learning_rate": lr, "n_train": len(y_tr), "n_val": len(y_val)})
    order_rng = rng_for(cfg.seed, "classifier", "order")
    for epoch in range(cfg.epochs):
        losses = []
        for b, idx in enumerate(_batches(len(y_tr), cfg.batch_size, order_rng)):
            loss = ad.softmax_cross_entropy(model.logits(x_tr[idx]), y_tr[idx])
            _check_finite(loss, epoch, b)
            ad.backward(loss, [model.params[n] for n in trainable])
            opt.step()
            losses.append(float(loss.data))
        rec.train_loss.append(float(np.mean(losses)) if losses else float("nan"))
        rec.train_acc.append(_accuracy(model, x_tr, y_tr))
        rec.val_acc.append(_accuracy(model, x_val, y_val) if len(y_val) else None)
    rec.wall_time_s = time.perf_counter() - start
    model.set_trainable(model.names())
    return model, rec


@dataclass
class EvalReport:
    """Accuracies on clean, car-noise and other-noise copies of the test set."""
    clean: Optional[float]
    car: Optional[float]
    other: Optional[float]
    confusion: Dict[str, List[List[int]]]
    classes: Tuple[str, ...]
    n_test: int

    def triple(self) -> str:
        fmt = lambda v: "-" if v is None else f"{100 * v:.1f}"
        return "/".join(fmt(v) for v in (self.clean, self.car, self.other))

    @property
    def noisy(self) -> Optional[float]:
        vals = [v for v in (self.car, self.other) if v is not None]
        return float(np.mean(vals)) if vals else None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["classes"] = list(self.classes)
        return d


def eval_specs(test_ids: Sequence[str], condition: str, bank: Optional[NoiseBank],
               seed: int) -> Optional[List[AugmentSpec]]:
    """Seeded noise specs for one evaluation condition, or None if the bank lacks it."""
    if condition == "clean":
        return [None] * len(test_ids)
    if bank is None:
        return None
    cats = [CAR] if condition == "car" else [c for c in OTHER_NOISES if c in bank]
    if not cats or (condition == "car" and CAR not in bank):
        return None
    specs = []
    for uid in test_ids:
        rng = rng_for(seed, "eval", condition, uid)
        specs.append(AugmentSpec("noise", seed=derive_seed(seed, "eval-noise", condition, uid),
                                 noise_id=cats[int(rng.integers(len(cats)))],
                                 snr_db=float(aug.SNR_LEVELS[int(rng.integers(len(aug.SNR_LEVELS)))])))
    return specs


def evaluate(model: Model, test_ids: Sequence[str], test_labels: Sequence[int], store: FeatureStore,
             noise_bank: Optional[NoiseBank] = None, seed: int = 0,
             classes: Tuple[str, ...] = ()) -> EvalReport:
    y = np.asarray(test_labels, dtype=np.int64)
    k = model.num_classes
    results, confusion = {}, {}
    saved_bank = store.noise_bank
    store.noise_bank = noise_bank
    try:
        for cond in ("clean", "car", "other"):
            specs = eval_specs(test_ids, cond, noise_bank, seed)
            if specs is None:
                results[cond] = None
                continue
            pred = model.predict(store.stack(list(test_ids), specs))
            cm = np.zeros((k, k), dtype=int)
            np.add.at(cm, (y, pred), 1)
            confusion[cond] = cm.tolist()
            results[cond] = float(np.mean(pred == y)) if len(y) else None
    finally:
        store.noise_bank = saved_bank
    return EvalReport(results["clean"], results["car"], results["other"], confusion,
                      tuple(classes), len(y))
