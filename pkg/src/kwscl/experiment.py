"""Experiment recipes: optional pre-task, frozen/unfrozen transfer, noisy evaluation."""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .augment import NoiseBank, sample_spec
from .corpus import Corpus, LabelSealError, SplitPlan, partition, write_corpus_manifest
from .nn.model import Model, TrunkConfig, save_checkpoint
from .pairing import (PairPlanConfig, gen_pseudo_supervised, gen_self_supervised_chunked,
                      gen_self_supervised_hard_negative, gen_supervised, write_manifest)
from .seeding import derive_seed, rng_for
from .trainer import (EPOCHS_FROM_CLASSIFIER, EPOCHS_FROM_CONTRASTIVE, EPOCHS_PRETRAIN,
                      EPOCHS_RANDOM_INIT, EvalReport, FeatureStore, RunRecord, Task, TrainConfig,
                      evaluate, make_one_vs_all_task, pretrain_contrastive, train_classifier)

log = logging.getLogger(__name__)

RECIPES = ("C", "CT1", "CT2", "SC1", "SC2", "PSC", "SSC", "SSHN")
CONTRASTIVE_RECIPES = ("SC1", "SC2", "PSC", "SSC", "SSHN")
TASKS = ("multi", "onevsall")
RESULT_COLUMNS = ("exp", "task", "clean", "car", "other")


class ExperimentError(ValueError):
    pass


@dataclass(frozen=True)
class EpochBudget:
    pretrain: int = EPOCHS_PRETRAIN
    classifier_pretask: int = EPOCHS_RANDOM_INIT
    random_init: int = EPOCHS_RANDOM_INIT
    from_classifier: int = EPOCHS_FROM_CLASSIFIER
    from_contrastive: int = EPOCHS_FROM_CONTRASTIVE
    finetune: int = 3


@dataclass(frozen=True)
class ExperimentSettings:
    recipe: str
    plan: SplitPlan
    task: str = "multi"
    seed: int = 0
    train: TrainConfig = TrainConfig()
    pairs: PairPlanConfig = PairPlanConfig()
    epochs: EpochBudget = EpochBudget()
    trunk: TrunkConfig = TrunkConfig()
    sshn_batch: int = 64
    pretask_augment: bool = True

    def __post_init__(self):
        if self.recipe not in RECIPES:
            raise ExperimentError(f"recipe must be one of {RECIPES}, got {self.recipe!r}")
        if self.task not in TASKS:
            raise ExperimentError(f"task must be one of {TASKS}, got {self.task!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["trunk"] = self.trunk.to_dict()
        return d


@dataclass
class ExperimentInputs:
    """Corpora and noise banks; feature stores are built lazily and shared across runs."""
    corpus: Corpus
    chunked: Optional[object] = None
    train_noise: Optional[NoiseBank] = None
    eval_noise: Optional[NoiseBank] = None
    _stores: Dict[str, FeatureStore] = field(default_factory=dict, repr=False)

    def store(self, which: str) -> FeatureStore:
        if which not in self._stores:
            src = self.corpus if which == "main" else self.chunked
            self._stores[which] = FeatureStore(src, self.train_noise)
        return self._stores[which]


@dataclass
class ResultRow:
    exp: str
    task: str
    clean: Optional[float]
    car: Optional[float]
    other: Optional[float]

    @property
    def noisy(self) -> Optional[float]:
        vals = [v for v in (self.car, self.other) if v is not None]
        return float(np.mean(vals)) if vals else None


@dataclass
class ExperimentResult:
    settings: ExperimentSettings
    rows: List[ResultRow] = field(default_factory=list)
    records: Dict[str, RunRecord] = field(default_factory=dict)
    reports: Dict[str, EvalReport] = field(default_factory=dict)
    models: Dict[str, Model] = field(default_factory=dict)
    stages: List[str] = field(default_factory=list)

    def row(self, exp: str, task: Optional[str] = None) -> ResultRow:
        for r in self.rows:
            if r.exp == exp and (task is None or r.task == task):
                return r
        raise KeyError(exp)


def stage_plan(settings: ExperimentSettings) -> List[str]:
    """Ordered stage names a recipe will execute."""
    r = settings.recipe
    stages = []
    if r in CONTRASTIVE_RECIPES:
        stages += ["pairgen", "pretrain"]
    elif r in ("CT1", "CT2"):
        stages += ["pretrain"]
    stages += ["train:random"] if r == "C" else ["train:frozen", "train:unfrozen"]
    return stages + ["eval"]


def _half(words):
    return tuple(words[: (len(words) + 1) // 2])


def _pretask_words(settings: ExperimentSettings):
    words = settings.plan.pretask_words
    return _half(words) if settings.recipe in ("CT2", "SC2") else words


def _tasks(settings: ExperimentSettings, inputs: ExperimentInputs, part) -> List[Task]:
    plan = settings.plan
    if settings.task == "multi":
        words = list(plan.maintask_words)
        train = list(part.maintask_train)
        test = list(part.maintask_test)
        return [Task("multi", tuple(words), [u.id for u in train], [words.index(u.word) for u in train],
                     [u.id for u in test], [words.index(u.word) for u in test])]
    main = inputs.corpus.select([u.id for u in inputs.corpus if u.word in plan.maintask_words])
    return [make_one_vs_all_task(main, w, derive_seed(settings.seed, "task"), plan.train_fraction)
            for w in plan.maintask_words]


def _classification_pretask(settings, inputs, pre_corpus):
    words = list(_pretask_words(settings))
    store = inputs.store("main")
    ids = [u.id for u in pre_corpus if u.word in words]
    labels = [words.index(pre_corpus[i].word) for i in ids]
    specs = [None] * len(ids)
    if settings.pretask_augment and inputs.train_noise is not None:
        rng = rng_for(settings.seed, "ct-augment")
        noise_ids = tuple(inputs.train_noise.ids)
        extra = [sample_spec(rng, derive_seed(settings.seed, "ct-augment", i), noise_ids)
                 for i in ids]
        ids, labels, specs = ids + ids, labels + labels, specs + extra
    x = store.stack(ids, specs)
    cfg = replace(settings.train, seed=derive_seed(settings.seed, "pretask"),
                  epochs=settings.epochs.classifier_pretask, freeze_base=False)
    model, rec = train_classifier(x, labels, len(words), cfg, trunk=settings.trunk)
    rec.extra["pretask_words"] = words
    return model, rec


def _pairs(settings, inputs, part):
    cfg = replace(settings.pairs, seed=derive_seed(settings.seed, "pairs"),
                  noise_ids=tuple(inputs.train_noise.ids) if inputs.train_noise else ())
    r = settings.recipe
    if r in ("SC1", "SC2"):
        words = set(_pretask_words(settings))
        return gen_supervised(part.pretask_train.select(
            [u.id for u in part.pretask_train if u.word in words]), cfg), "main"
    if r == "PSC":
        return gen_pseudo_supervised(part.pretask_train, (part.set1.words(), part.set2.words()),
                                     cfg), "main"
    if r == "SSHN":
        return gen_self_supervised_hard_negative(part.pretask_train.seal(), settings.sshn_batch,
                                                 cfg), "main"
    chunk_part = partition(inputs.chunked, settings.plan)
    return gen_self_supervised_chunked(chunk_part.pretask_train, cfg), "chunk"


def run_experiment(settings: ExperimentSettings, inputs: ExperimentInputs,
                   out_dir: Optional[str | os.PathLike] = None) -> ExperimentResult:
    """Run one recipe end to end and return result rows in a/b/c layout."""
    r = settings.recipe
    if r == "SSC":
        if inputs.chunked is None:
            raise ExperimentError("SSC needs a chunked long-audio corpus")
        if not getattr(inputs.chunked, "sealed", False):
            raise LabelSealError("SSC refuses an unsealed (labelled) chunked corpus")
    if r in CONTRASTIVE_RECIPES and settings.train.freeze_base:
        raise ExperimentError("pre-training config must not freeze the base")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    result = ExperimentResult(settings, stages=stage_plan(settings))
    part = partition(inputs.corpus, settings.plan)
    tasks = _tasks(settings, inputs, part)

    pre_model = None
    transfer_epochs = settings.epochs.from_contrastive
    if r in CONTRASTIVE_RECIPES:
        pairs, which = _pairs(settings, inputs, part)
        if out is not None:
            write_manifest(out / "pairs.jsonl", pairs)
        cfg = replace(settings.train, seed=derive_seed(settings.seed, "pretrain"),
                      epochs=settings.epochs.pretrain, freeze_base=False)
        pre_model, rec = pretrain_contrastive(
            pairs, inputs.store(which), cfg, settings.trunk, strategy=pairs[0].strategy,
            out_path=(out / "pretask.ckpt") if out is not None else None)
        result.records["pretask"] = rec
    elif r in ("CT1", "CT2"):
        transfer_epochs = settings.epochs.from_classifier
        pre_model, rec = _classification_pretask(settings, inputs, part.pretask_train)
        result.records["pretask"] = rec
        if out is not None:
            save_checkpoint(out / "pretask.ckpt", pre_model, {"stage": "pretask", **rec.extra})
    if pre_model is not None:
        result.models["pretask"] = pre_model

    store = inputs.store("main")
    eval_seed = derive_seed(settings.seed, "eval")
    for task in tasks:
        x = store.stack(task.train_ids)
        k = len(task.classes)
        tag = task.name.replace(":", "-")
        task_label = task.name.split(":")[-1]
        runs = []
        if pre_model is None:
            cfg = replace(settings.train, seed=derive_seed(settings.seed, "main", task.name),
                          epochs=settings.epochs.random_init, freeze_base=False)
            model, rec = train_classifier(x, task.train_labels, k, cfg, trunk=settings.trunk)
            runs.append((r, model, rec))
        else:
            cfg = replace(settings.train, seed=derive_seed(settings.seed, "main", task.name),
                          epochs=transfer_epochs, freeze_base=True)
            frozen, rec = train_classifier(x, task.train_labels, k, cfg, init=pre_model)
            runs.append((f"{r}/frozen", frozen, rec))
            cfg = replace(cfg, epochs=settings.epochs.finetune, freeze_base=False,
                          seed=derive_seed(settings.seed, "finetune", task.name))
            unfrozen, rec = train_classifier(x, task.train_labels, k, cfg, init=frozen,
                                             keep_head=True)
            runs.append((f"{r}/unfrozen", unfrozen, rec))
        for exp, model, rec in runs:
            key = f"{exp}:{tag}"
            report = evaluate(model, task.test_ids, task.test_labels, store, inputs.eval_noise,
                              eval_seed, task.classes)
            result.records[key] = rec
            result.reports[key] = report
            result.models[key] = model
            result.rows.append(ResultRow(exp, task_label, report.clean, report.car, report.other))
            log.info("%s %s %s", exp, task_label, report.triple())
            if out is not None:
                save_checkpoint(out / f"{exp.replace('/', '-')}-{tag}.ckpt", model,
                                {"stage": exp, "task": task.name, "classes": list(task.classes)})

    if out is not None:
        write_corpus_manifest(out / "maintask_train.jsonl", part.maintask_train)
        write_corpus_manifest(out / "maintask_test.jsonl", part.maintask_test)
        with open(out / "settings.json", "w") as fh:
            json.dump(settings.to_dict(), fh, indent=2, sort_keys=True)
        with open(out / "records.json", "w") as fh:
            json.dump({k: v.to_dict() for k, v in result.records.items()}, fh, indent=2,
                      sort_keys=True)
        with open(out / "reports.json", "w") as fh:
            json.dump({k: v.to_dict() for k, v in result.reports.items()}, fh, indent=2,
                      sort_keys=True)
        write_results_csv(out / "results.csv", result.rows)
    return result


def _fmt(v: Optional[float]) -> str:
    return "" if v is None else f"{100 * v:.2f}"


def write_results_csv(path: str | os.PathLike, rows: List[ResultRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RESULT_COLUMNS)
        for r in rows:
            w.writerow([r.exp, r.task, _fmt(r.clean), _fmt(r.car), _fmt(r.other)])


def read_results_csv(path: str | os.PathLike) -> List[ResultRow]:
    def val(s):
        return None if s == "" else float(s) / 100.0
    with open(path, newline="") as fh:
        return [ResultRow(rec["exp"], rec["task"], val(rec["clean"]), val(rec["car"]),
                          val(rec["other"])) for rec in csv.DictReader(fh)]
