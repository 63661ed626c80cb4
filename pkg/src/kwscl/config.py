"""INI experiment configuration: parsing, field-level validation, object construction."""

from __future__ import annotations

import configparser
import os
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

from .augment import NoiseBank
from .corpus import SplitPlan, ingest_single_word_corpus, read_corpus_manifest
from .experiment import RECIPES, TASKS, EpochBudget, ExperimentInputs, ExperimentSettings
from .nn.autodiff import PAPER_STATED, SIMILAR_IS_1
from .pairing import PairPlanConfig
from .trainer import TrainConfig

DEFAULTS = {
    "experiment": {"recipe": "C", "task": "multi", "seed": "0", "out": "runs/experiment"},
    "data": {"corpus_dir": "", "corpus_manifest": "", "chunked_manifest": "",
             "train_noise_dir": "", "eval_noise_dir": ""},
    "split": {"pretask_words": "", "maintask_words": "", "train_fraction": "0.8",
              "set1_fraction": "0.3"},
    "pairs": {"pos_per_utterance": "2", "neg_per_utterance": "2",
              "include_augmented_negatives": "true", "sshn_batch": "64"},
    "train": {"batch_size": "64", "learning_rate": "0.001", "finetune_lr_factor": "0.1",
              "optimizer": "adam", "label_convention": SIMILAR_IS_1, "val_fraction": "0.1",
              "pretask_augment": "true"},
    "epochs": {"pretrain": "3", "classifier_pretask": "15", "random_init": "15",
               "from_classifier": "10", "from_contrastive": "6", "finetune": "3"},
}


class ConfigError(ValueError):
    """Carries one message per offending ``section.key``."""

    def __init__(self, errors: List[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


def load_config(path: Optional[str | os.PathLike] = None) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_dict(DEFAULTS)
    if path is not None:
        if not Path(path).is_file():
            raise ConfigError([f"config: file {path} not found"])
        cp.read(path)
        cp.set("experiment", "_base_dir", str(Path(path).resolve().parent))
    return cp


def dump_config(cp: configparser.ConfigParser, path: str | os.PathLike) -> None:
    snapshot = configparser.ConfigParser(interpolation=None)
    for section in cp.sections():
        snapshot[section] = {k: v for k, v in cp[section].items() if not k.startswith("_")}
    with open(path, "w") as fh:
        snapshot.write(fh)


def _words(s: str) -> Tuple[str, ...]:
    return tuple(w.strip() for w in s.split(",") if w.strip())


def _path(cp, key: str) -> Optional[Path]:
    raw = cp.get("data", key).strip()
    if not raw:
        return None
    p = Path(raw)
    base = cp.get("experiment", "_base_dir", fallback="")
    return p if p.is_absolute() or not base else Path(base) / p


class _Reader:
    def __init__(self, cp):
        self.cp = cp
        self.errors: List[str] = []

    def get(self, section: str, key: str, conv: Callable = str, check=None, hint: str = ""):
        raw = self.cp.get(section, key)
        try:
            value = conv(raw)
        except ValueError:
            self.errors.append(f"{section}.{key}: cannot parse {raw!r}")
            return None
        if check is not None and not check(value):
            self.errors.append(f"{section}.{key}: {hint or 'invalid value'} (got {raw!r})")
            return None
        return value


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(s)


def experiment_settings(cp: configparser.ConfigParser, check_paths: bool = True
                        ) -> ExperimentSettings:
    """Validate every field; raises :class:`ConfigError` listing all problems at once."""
    r = _Reader(cp)
    recipe = r.get("experiment", "recipe", str.strip, lambda v: v in RECIPES, f"one of {RECIPES}")
    task = r.get("experiment", "task", str.strip, lambda v: v in TASKS, f"one of {TASKS}")
    seed = r.get("experiment", "seed", int, lambda v: v >= 0, "non-negative integer")
    pre = _words(cp.get("split", "pretask_words"))
    main = _words(cp.get("split", "maintask_words"))
    if not main:
        r.errors.append("split.maintask_words: at least one word required")
    if recipe not in (None, "C", "SSC") and not pre:
        r.errors.append("split.pretask_words: required by this recipe")
    if set(pre) & set(main):
        r.errors.append(f"split: pre-task and main-task words overlap {sorted(set(pre) & set(main))}")
    frac = lambda v: 0.0 < v < 1.0
    train_fraction = r.get("split", "train_fraction", float, frac, "must be in (0, 1)")
    set1_fraction = r.get("split", "set1_fraction", float, frac, "must be in (0, 1)")

    pos = r.get("pairs", "pos_per_utterance", int, lambda v: v >= 1, ">= 1")
    neg = r.get("pairs", "neg_per_utterance", int, lambda v: v >= 1, ">= 1")
    aug_neg = r.get("pairs", "include_augmented_negatives", _bool)
    sshn_batch = r.get("pairs", "sshn_batch", int, lambda v: v >= 2, ">= 2")

    batch = r.get("train", "batch_size", int, lambda v: v >= 1, ">= 1")
    lr = r.get("train", "learning_rate", float, lambda v: v > 0, "> 0")
    ft = r.get("train", "finetune_lr_factor", float, lambda v: 0 < v <= 1, "in (0, 1]")
    opt = r.get("train", "optimizer", str.strip, lambda v: v in ("adam", "sgd_momentum"),
                "adam or sgd_momentum")
    conv = r.get("train", "label_convention", str.strip,
                 lambda v: v in (SIMILAR_IS_1, PAPER_STATED), f"{SIMILAR_IS_1} or {PAPER_STATED}")
    val = r.get("train", "val_fraction", float, lambda v: 0 <= v < 1, "in [0, 1)")
    pre_aug = r.get("train", "pretask_augment", _bool)
    epochs = {k: r.get("epochs", k, int, lambda v: v >= 0, ">= 0") for k in DEFAULTS["epochs"]}

    if check_paths:
        for key in DEFAULTS["data"]:
            p = _path(cp, key)
            if p is not None and not p.exists():
                r.errors.append(f"data.{key}: path {p} does not exist")
        if _path(cp, "corpus_dir") is None and _path(cp, "corpus_manifest") is None:
            r.errors.append("data: one of corpus_dir / corpus_manifest is required")
        if recipe == "SSC" and _path(cp, "chunked_manifest") is None:
            r.errors.append("data.chunked_manifest: required by the SSC recipe")
    if r.errors:
        raise ConfigError(r.errors)
    return ExperimentSettings(
        recipe=recipe, task=task, seed=seed,
        plan=SplitPlan(pre, main, train_fraction, set1_fraction, seed),
        train=TrainConfig(batch_size=batch, learning_rate=lr, finetune_lr_factor=ft,
                          optimizer=opt, label_convention=conv, val_fraction=val, seed=seed),
        pairs=PairPlanConfig(pos, neg, aug_neg, seed),
        epochs=EpochBudget(**epochs), sshn_batch=sshn_batch, pretask_augment=pre_aug)


def load_corpus(cp: configparser.ConfigParser):
    manifest = _path(cp, "corpus_manifest")
    if manifest is not None:
        return read_corpus_manifest(manifest)
    return ingest_single_word_corpus(_path(cp, "corpus_dir"))


def load_noise(cp: configparser.ConfigParser, key: str) -> Optional[NoiseBank]:
    p = _path(cp, key)
    return NoiseBank.from_dir(p) if p is not None else None


def experiment_inputs(cp: configparser.ConfigParser, need_chunked: bool = False) -> ExperimentInputs:
    chunked_path = _path(cp, "chunked_manifest")
    chunked = read_corpus_manifest(chunked_path) if chunked_path is not None else None
    if need_chunked and chunked is None:
        raise ConfigError(["data.chunked_manifest: required"])
    return ExperimentInputs(load_corpus(cp), chunked, load_noise(cp, "train_noise_dir"),
                            load_noise(cp, "eval_noise_dir"))


def render_config(values: Dict[str, Dict[str, str]]) -> str:
    """INI text for a partial config (unspecified keys keep their defaults)."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_dict(values)
    lines = []
    for section in cp.sections():
        lines.append(f"[{section}]")
        lines += [f"{k} = {v}" for k, v in cp[section].items()]
        lines.append("")
    return "\n".join(lines)
