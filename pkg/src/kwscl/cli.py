"""Command-line entry point: ``kwscl <command> [options]``.

Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

from . import __version__
from .audio_io import AudioError, load_wav, save_wav, to_canonical
from .config import (ConfigError, dump_config, experiment_inputs, experiment_settings,
                     load_config, render_config)
from .corpus import (CHUNKED, Corpus, CorpusError, LabelSealError, Utterance, VadParams,
                     chunk_by_manifest, chunk_by_vad, filter_min_duration,
                     ingest_single_word_corpus, pad_or_crop_clip, partition, read_alignment_tsv,
                     read_corpus_manifest, write_alignment_tsv, write_corpus_manifest)
from .dsp import FRAME_LEN, FRAME_STEP, N_MELS, N_MFCC, mfcc, save_features
from .experiment import (CONTRASTIVE_RECIPES, ExperimentError, ExperimentInputs, _pairs,
                         run_experiment, stage_plan)
from .nn.model import load_checkpoint, save_checkpoint
from .pairing import PairingError, read_manifest, write_manifest
from .seeding import derive_seed
from .trainer import (TrainingError, evaluate, make_multiclass_task,
                      make_one_vs_all_task, pretrain_contrastive, train_classifier)

log = logging.getLogger("kwscl")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
VALIDATION_ERRORS = (ConfigError, CorpusError, PairingError, ExperimentError, LabelSealError,
                     AudioError, FileNotFoundError)
FEATURE_PARAMS = f"mfcc:{FRAME_LEN}:{FRAME_STEP}:{N_MELS}:{N_MFCC}:pad1s"


class UsageError(ValueError):
    pass


def _settings(args, check_paths=True):
    cp = load_config(args.config)
    if args.seed is not None:
        cp.set("experiment", "seed", str(args.seed))
    if args.out is not None:
        cp.set("experiment", "out", args.out)
        cp.set("experiment", "_out_from_cli", "true")
    return cp, experiment_settings(cp, check_paths)


def _out_dir(cp) -> Path:
    out = Path(cp.get("experiment", "out"))
    base = cp.get("experiment", "_base_dir", fallback="")
    if not out.is_absolute() and base and not cp.getboolean("experiment", "_out_from_cli",
                                                            fallback=False):
        out = Path(base) / out
    out.mkdir(parents=True, exist_ok=True)
    return out


def _print_plan(name: str, steps: List[str]) -> int:
    print(f"{name}: dry run, stages:")
    for i, s in enumerate(steps, 1):
        print(f"  {i}. {s}")
    return EXIT_OK


# -- featurize -------------------------------------------------------------

def _feature_name(utt_id: str) -> str:
    safe = "".join(c if c.isalnum() or c in "-_." else "_" for c in utt_id)
    return f"{safe}-{hashlib.sha1(utt_id.encode()).hexdigest()[:8]}.kwsf"


def _source_hash(corpus, utt) -> str:
    h = hashlib.sha256(FEATURE_PARAMS.encode())
    if utt.path is not None:
        h.update(Path(utt.path).read_bytes())
    else:
        h.update(corpus.audio(utt.id).samples.tobytes())
    return h.hexdigest()


def cmd_featurize(args) -> int:
    if args.manifest is None and args.corpus_dir is None:
        raise UsageError("featurize needs --manifest or --corpus-dir")
    if args.dry_run:
        return _print_plan("featurize", ["read corpus", "hash sources", "compute missing MFCCs",
                                         "write index.json"])
    if args.manifest:
        corpus = read_corpus_manifest(args.manifest)
    else:
        corpus = ingest_single_word_corpus(args.corpus_dir)
    out = Path(args.out or "features")
    out.mkdir(parents=True, exist_ok=True)
    index_path = out / "index.json"
    index = json.loads(index_path.read_text()) if index_path.exists() else {}

    def work(utt):
        try:
            digest = _source_hash(corpus, utt)
            name = _feature_name(utt.id)
            entry = index.get(utt.id)
            if entry and entry["hash"] == digest and (out / entry["file"]).exists():
                return utt.id, "skipped", entry, None
            feats = mfcc(pad_or_crop_clip(corpus.audio(utt.id), 1.0))
            save_features(out / name, feats)
            return utt.id, "computed", {"file": name, "hash": digest}, None
        except Exception as exc:  # reported per file, others proceed
            return utt.id, "error", None, f"{type(exc).__name__}: {exc}"

    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        results = list(pool.map(work, list(corpus)))
    counts = {"computed": 0, "skipped": 0, "error": 0}
    errors = []
    for utt_id, status, entry, err in results:
        counts[status] += 1
        if entry is not None:
            index[utt_id] = entry
        if err is not None:
            errors.append((utt_id, err))
    index_path.write_text(json.dumps(index, indent=1, sort_keys=True))
    print(f"featurize: computed {counts['computed']}, skipped {counts['skipped']}, "
          f"errors {counts['error']}")
    for utt_id, err in errors:
        print(f"  error {utt_id}: {err}", file=sys.stderr)
    return EXIT_RUNTIME if errors else EXIT_OK


# -- chunk -----------------------------------------------------------------

def cmd_chunk(args) -> int:
    if bool(args.alignments) == bool(args.vad):
        raise UsageError("chunk needs exactly one of --alignments or --vad")
    if args.dry_run:
        return _print_plan("chunk", ["load long audio", "vad segmentation" if args.vad
                                     else "cut by alignment", f"drop < {args.min_duration}s",
                                     "write clips and manifest" + (" (sealed)" if args.seal_labels
                                                                   else "")])
    src = Path(args.long_audio)
    if not src.is_dir():
        raise FileNotFoundError(f"long-audio directory {src} not found")
    audio = {p.stem: to_canonical(load_wav(p)) for p in sorted(src.glob("*.wav"))}
    if args.alignments:
        corpus = chunk_by_manifest(audio, read_alignment_tsv(args.alignments))
    else:
        utts = []
        for aid, clip in audio.items():
            for i, (a, b) in enumerate(chunk_by_vad(clip, VadParams())):
                i0, i1 = int(round(a * clip.sample_rate)), int(round(b * clip.sample_rate))
                utts.append(Utterance(f"{aid}#{i:05d}", source=CHUNKED,
                                      clip=clip.with_samples(clip.samples[i0:i1])))
        corpus = Corpus(utts)
    corpus = filter_min_duration(corpus, args.min_duration)
    out = Path(args.out or "chunks")
    (out / "clips").mkdir(parents=True, exist_ok=True)
    utts = []
    for u in corpus:
        rel = f"clips/{u.id.replace('#', '_')}.wav"
        save_wav(out / rel, corpus.audio(u.id))
        utts.append(replace(u, path=rel, clip=None))
    result = Corpus(utts)
    write_corpus_manifest(out / "corpus.jsonl", result.seal() if args.seal_labels else result)
    print(f"chunk: {len(result)} utterances -> {out / 'corpus.jsonl'}"
          + (" (labels sealed)" if args.seal_labels else ""))
    return EXIT_OK


# -- pairgen / pretrain / train / eval ----------------------------------------

def _strategy_recipe(settings, strategy: Optional[str]) -> str:
    if strategy is None:
        if settings.recipe not in CONTRASTIVE_RECIPES:
            raise UsageError(f"recipe {settings.recipe} has no pair generation; pass --strategy")
        return settings.recipe
    return {"SC": "SC1", "PSC": "PSC", "SSC": "SSC", "SSHN": "SSHN"}[strategy]


def cmd_pairgen(args) -> int:
    cp, settings = _settings(args)
    recipe = _strategy_recipe(settings, args.strategy)
    settings = replace(settings, recipe=recipe)
    if args.dry_run:
        return _print_plan("pairgen", [f"partition corpus ({recipe})", "generate pairs",
                                       "write pairs.jsonl"])
    inputs = experiment_inputs(cp, need_chunked=recipe == "SSC")
    if recipe == "SSC" and not getattr(inputs.chunked, "sealed", False):
        raise LabelSealError("SSC pair generation refuses an unsealed manifest")
    part = partition(inputs.corpus, settings.plan)
    pairs, _ = _pairs(settings, inputs, part)
    out = _out_dir(cp)
    write_manifest(out / "pairs.jsonl", pairs)
    print(f"pairgen: {len(pairs)} {recipe} pairs -> {out / 'pairs.jsonl'}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cp, settings = _settings(args)
    if args.dry_run:
        return _print_plan("pretrain", ["read pairs", "contrastive training",
                                        "write pretask.ckpt"])
    pairs = read_manifest(args.pairs)
    if not pairs:
        raise PairingError("pair manifest is empty")
    ssc = pairs[0].strategy == "SSC"
    inputs = experiment_inputs(cp, need_chunked=ssc)
    store = inputs.store("chunk" if ssc else "main")
    cfg = replace(settings.train, seed=derive_seed(settings.seed, "pretrain"),
                  epochs=settings.epochs.pretrain, freeze_base=False)
    out = _out_dir(cp)
    _, rec = pretrain_contrastive(pairs, store, cfg, settings.trunk, out_path=out / "pretask.ckpt")
    (out / "pretask.record.json").write_text(json.dumps(rec.to_dict(), indent=2, sort_keys=True))
    print(f"pretrain: final loss {rec.train_loss[-1] if rec.train_loss else float('nan'):.4f}"
          f" -> {out / 'pretask.ckpt'}")
    return EXIT_OK


def _task(settings, inputs: ExperimentInputs, spec: str):
    words = settings.plan.maintask_words
    main = inputs.corpus.select([u.id for u in inputs.corpus if u.word in words])
    if spec == "multi":
        return make_multiclass_task(main, words, derive_seed(settings.seed, "task"),
                                    settings.plan.train_fraction)
    if spec.startswith("onevsall:"):
        return make_one_vs_all_task(main, spec.split(":", 1)[1],
                                    derive_seed(settings.seed, "task"), settings.plan.train_fraction)
    raise UsageError(f"--task must be 'multi' or 'onevsall:<word>', got {spec!r}")


def cmd_train(args) -> int:
    cp, settings = _settings(args)
    if args.dry_run:
        return _print_plan("train", ["build task", f"init {args.init}",
                                     "frozen-base training" if args.freeze_base else "training",
                                     "write model.ckpt"])
    inputs = experiment_inputs(cp)
    task = _task(settings, inputs, args.task)
    init = None
    if args.init != "random":
        init, _ = load_checkpoint(args.init)
        if init.config != settings.trunk:
            raise ConfigError(["--init: checkpoint trunk config does not match"])
    epochs = args.epochs if args.epochs is not None else (
        settings.epochs.random_init if init is None else settings.epochs.from_contrastive)
    cfg = replace(settings.train, seed=derive_seed(settings.seed, "main", task.name),
                  epochs=epochs, freeze_base=bool(args.freeze_base and init is not None))
    store = inputs.store("main")
    model, rec = train_classifier(store.stack(task.train_ids), task.train_labels,
                                  len(task.classes), cfg, init=init, trunk=settings.trunk)
    out = _out_dir(cp)
    save_checkpoint(out / "model.ckpt", model, {"stage": "train", "task": task.name,
                                                "classes": list(task.classes),
                                                "test_ids": task.test_ids,
                                                "test_labels": task.test_labels})
    (out / "train.record.json").write_text(json.dumps(rec.to_dict(), indent=2, sort_keys=True))
    print(f"train: train acc {rec.train_acc[-1] if rec.train_acc else float('nan'):.3f}"
          f" -> {out / 'model.ckpt'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cp, settings = _settings(args)
    if args.dry_run:
        return _print_plan("eval", ["load checkpoint", "clean / car / other evaluation",
                                    "write report.json"])
    model, meta = load_checkpoint(args.checkpoint)
    inputs = experiment_inputs(cp)
    if "test_ids" in meta:
        ids, labels, classes = meta["test_ids"], meta["test_labels"], tuple(meta["classes"])
    else:
        task = _task(settings, inputs, args.task)
        ids, labels, classes = task.test_ids, task.test_labels, task.classes
    report = evaluate(model, ids, labels, inputs.store("main"), inputs.eval_noise,
                      derive_seed(settings.seed, "eval"), classes)
    out = _out_dir(cp)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    print(f"eval: {report.triple()}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    cp, settings = _settings(args, check_paths=not args.dry_run)
    if args.dry_run:
        return _print_plan(f"experiment {settings.recipe}", stage_plan(settings))
    inputs = experiment_inputs(cp, need_chunked=settings.recipe == "SSC")
    out = _out_dir(cp)
    dump_config(cp, out / "config.ini")
    result = run_experiment(settings, inputs, out)
    for r in result.rows:
        fmt = lambda v: "-" if v is None else f"{100 * v:.1f}"
        print(f"{r.exp}\t{r.task}\t{fmt(r.clean)}/{fmt(r.car)}/{fmt(r.other)}")
    return EXIT_OK


# -- synth -------------------------------------------------------------------

def cmd_synth(args) -> int:
    """Write a synthetic desk-scale fixture plus a ready-to-run config."""
    from .synthetic import build_desk_fixture, write_long_audio, write_noise_bank, \
        write_single_word_corpus
    if args.dry_run:
        return _print_plan("synth", ["generate corpora and noise", "write wavs",
                                     "write experiment.ini"])
    out = Path(args.out or "fixture")
    seed = args.seed if args.seed is not None else 0
    fx = build_desk_fixture(seed, args.pretask_per_word, args.maintask_per_word, args.sentences)
    write_single_word_corpus(out / "corpus", fx.corpus)
    write_long_audio(out / "long_audio", fx.long_audio)
    write_alignment_tsv(out / "alignments.tsv", fx.alignments)
    write_noise_bank(out / "noise" / "train", fx.train_noise)
    write_noise_bank(out / "noise" / "eval", fx.eval_noise)
    (out / "experiment.ini").write_text(render_config({
        "experiment": {"recipe": "SC1", "task": "multi", "seed": str(seed), "out": "run"},
        "data": {"corpus_dir": "corpus", "chunked_manifest": "chunks/corpus.jsonl",
                 "train_noise_dir": "noise/train", "eval_noise_dir": "noise/eval"},
        "split": {"pretask_words": ",".join(fx.pretask_words),
                  "maintask_words": ",".join(fx.maintask_words)},
    }))
    print(f"synth: fixture written to {out}")
    return EXIT_OK


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI experiment config")
    common.add_argument("--seed", type=int, help="master seed (overrides config)")
    common.add_argument("--out", help="output directory (overrides config)")
    common.add_argument("--jobs", type=int, default=1, help="parallel file-level workers")
    common.add_argument("--dry-run", action="store_true", help="print the stage plan only")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="kwscl", description="Contrastive keyword-spotting toolkit")
    p.add_argument("--version", action="version", version=f"kwscl {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("featurize", parents=[common], help="MFCC feature files per utterance")
    s.add_argument("--manifest", help="corpus manifest (JSON lines)")
    s.add_argument("--corpus-dir", help="<word>/<file>.wav corpus directory")
    s.set_defaults(func=cmd_featurize)

    s = sub.add_parser("chunk", parents=[common], help="cut long audio into word chunks")
    s.add_argument("--long-audio", required=True, help="directory of long recordings")
    s.add_argument("--alignments", help="word alignment TSV")
    s.add_argument("--vad", action="store_true", help="energy VAD segmentation")
    s.add_argument("--min-duration", type=float, default=0.4)
    s.add_argument("--seal-labels", action="store_true", help="emit a label-sealed manifest")
    s.set_defaults(func=cmd_chunk)

    s = sub.add_parser("pairgen", parents=[common], help="generate a pair manifest")
    s.add_argument("--strategy", choices=("SC", "PSC", "SSC", "SSHN"))
    s.set_defaults(func=cmd_pairgen)

    s = sub.add_parser("pretrain", parents=[common], help="contrastive pre-training")
    s.add_argument("--pairs", required=True, help="pair manifest")
    s.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("train", parents=[common], help="main-task classifier training")
    s.add_argument("--init", default="random", help="'random' or a checkpoint path")
    s.add_argument("--freeze-base", action="store_true")
    s.add_argument("--task", default="multi", help="'multi' or 'onevsall:<word>'")
    s.add_argument("--epochs", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="clean/car/other accuracy")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--task", default="multi")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("experiment", parents=[common], help="run a full recipe")
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic desk-scale fixture")
    s.add_argument("--pretask-per-word", type=int, default=100)
    s.add_argument("--maintask-per-word", type=int, default=50)
    s.add_argument("--sentences", type=int, default=100)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (UsageError,) + VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except TrainingError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # pragma: no cover - last-resort reporting
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
