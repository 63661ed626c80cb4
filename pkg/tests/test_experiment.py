import configparser
import hashlib

import numpy as np
import pytest

from kwscl import config as kc
from kwscl.corpus import LabelSealError, SplitPlan
from kwscl.experiment import (EpochBudget, ExperimentError, ExperimentInputs, ExperimentSettings,
                              ResultRow, read_results_csv, run_experiment, stage_plan,
                              write_results_csv)
from kwscl.nn.autodiff import Tensor
from kwscl.nn.model import TrunkConfig
from kwscl.nn.optim import make_optimizer
from kwscl.pairing import PairPlanConfig
from kwscl.seeding import derive_seed, rng_for
from kwscl import synthetic as syn
from kwscl.trainer import TrainConfig

SMALL = TrunkConfig(channels=(4, 4, 8, 8, 8, 8), dense_hidden=16)
TINY_EPOCHS = EpochBudget(pretrain=1, classifier_pretask=1, random_init=1, from_classifier=1,
                          from_contrastive=1, finetune=1)


def test_derive_seed_rule():
    text = "7:pairs:SC"
    expect = int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "little")
    assert derive_seed(7, "pairs", "SC") == expect & ((1 << 63) - 1)
    assert derive_seed(7, "a") != derive_seed(8, "a") != derive_seed(7, "b")
    assert rng_for(1, "x").integers(1 << 30) == rng_for(1, "x").integers(1 << 30)


@pytest.mark.parametrize("name", ["adam", "sgd_momentum"])
def test_zero_learning_rate_is_noop(name):
    t = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    t.grad = np.array([3.0, 4.0])
    opt = make_optimizer(name, {"t": t}, 0.0)
    opt.step()
    assert list(t.data) == [1.0, -2.0]


@pytest.mark.parametrize("recipe,stages", [
    ("C", ["train:random", "eval"]),
    ("CT1", ["pretrain", "train:frozen", "train:unfrozen", "eval"]),
    ("SC2", ["pairgen", "pretrain", "train:frozen", "train:unfrozen", "eval"]),
    ("SSHN", ["pairgen", "pretrain", "train:frozen", "train:unfrozen", "eval"]),
])
def test_stage_plan(recipe, stages):
    assert stage_plan(ExperimentSettings(recipe, SplitPlan())) == stages


def test_settings_validation():
    with pytest.raises(ExperimentError):
        ExperimentSettings("SC3", SplitPlan())
    with pytest.raises(ExperimentError):
        ExperimentSettings("C", SplitPlan(), task="pairs")


def test_results_csv_round_trip(tmp_path):
    rows = [ResultRow("SC1/frozen", "multi", 0.5, 0.25, None), ResultRow("C", "four", 1.0, 0.0, 0.125)]
    write_results_csv(tmp_path / "r.csv", rows)
    text = (tmp_path / "r.csv").read_text().splitlines()
    assert text[1] == "SC1/frozen,multi,50.00,25.00,"
    back = read_results_csv(tmp_path / "r.csv")
    assert back == rows
    assert back[0].noisy == 0.25 and back[1].noisy == pytest.approx(0.0625)


@pytest.fixture(scope="module")
def mini():
    vocab = syn.make_vocabulary(("aa", "bb", "cc", "dd", "ee", "ff"), seed=5)
    corpus = syn.build_single_word_corpus(vocab, 6, seed=5, n_speakers=6)
    audio, rows = syn.build_long_audio(vocab, 2, seed=5)
    from kwscl.corpus import chunk_by_manifest
    chunked = chunk_by_manifest(audio, rows)
    bank = syn.build_noise_bank(5, clips_per_category=1, duration_s=1.2)
    plan = SplitPlan(("aa", "bb", "cc", "dd"), ("ee", "ff"), seed=5)
    return ExperimentInputs(corpus, chunked.seal(), bank, bank), chunked, plan


def settings(recipe, plan, **kw):
    return ExperimentSettings(recipe, plan, trunk=SMALL, epochs=TINY_EPOCHS,
                              pairs=PairPlanConfig(1, 1), train=TrainConfig(batch_size=16), **kw)


@pytest.mark.parametrize("recipe", ["C", "CT1", "CT2", "SC1", "SC2", "PSC", "SSC", "SSHN"])
def test_every_recipe_runs(mini, recipe):
    inputs, _, plan = mini
    res = run_experiment(settings(recipe, plan), inputs)
    exps = [r.exp for r in res.rows]
    assert exps == (["C"] if recipe == "C" else [f"{recipe}/frozen", f"{recipe}/unfrozen"])
    for r in res.rows:
        assert all(0.0 <= v <= 1.0 for v in (r.clean, r.car, r.other))
    if recipe in ("CT2", "SC2"):
        words = res.records["pretask"].extra.get("pretask_words")
        if words is not None:
            assert words == ["aa", "bb"]
    if recipe != "C":
        pre = res.models["pretask"]
        frozen = res.models[f"{recipe}/frozen:multi"]
        for n in pre.names(include_dense=False, include_head=False):
            assert pre.params[n].data.tobytes() == frozen.params[n].data.tobytes()


def test_sc2_uses_half_the_pretask_words(mini):
    inputs, _, plan = mini
    res = run_experiment(settings("SC2", plan), inputs)
    n_pairs = res.records["pretask"].extra["n_pairs"]
    assert n_pairs == 2 * 2 * 6


def test_one_vs_all_rows(mini):
    inputs, _, plan = mini
    res = run_experiment(settings("C", plan, task="onevsall"), inputs)
    assert [(r.exp, r.task) for r in res.rows] == [("C", "ee"), ("C", "ff")]


def test_ssc_label_guards(mini):
    inputs, chunked, plan = mini
    open_inputs = ExperimentInputs(inputs.corpus, chunked, inputs.train_noise, inputs.eval_noise)
    with pytest.raises(LabelSealError):
        run_experiment(settings("SSC", plan), open_inputs)
    with pytest.raises(ExperimentError):
        run_experiment(settings("SSC", plan), ExperimentInputs(inputs.corpus))
    sealed = inputs.chunked
    before = sealed.label_reads
    run_experiment(settings("SSC", plan), inputs)
    assert sealed.label_reads == before == 0


def test_pretrain_cannot_freeze(mini):
    inputs, _, plan = mini
    s = ExperimentSettings("SC1", plan, train=TrainConfig(freeze_base=True))
    with pytest.raises(ExperimentError):
        run_experiment(s, inputs)


def test_run_is_deterministic(mini, tmp_path):
    inputs, _, plan = mini
    a = run_experiment(settings("SC1", plan), inputs, tmp_path / "a")
    b = run_experiment(settings("SC1", plan), inputs, tmp_path / "b")
    assert a.rows == b.rows
    for name in ("pretask.ckpt", "SC1-frozen-multi.ckpt", "results.csv", "pairs.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_config_defaults_and_overrides(tmp_path):
    ini = tmp_path / "e.ini"
    ini.write_text(kc.render_config({
        "experiment": {"recipe": "PSC", "seed": "3"},
        "data": {"corpus_dir": "."},
        "split": {"pretask_words": "a, b,c", "maintask_words": "d"},
        "epochs": {"pretrain": "9"},
    }))
    cp = kc.load_config(ini)
    s = kc.experiment_settings(cp)
    assert s.recipe == "PSC" and s.seed == 3 and s.plan.pretask_words == ("a", "b", "c")
    assert s.epochs.pretrain == 9 and s.epochs.random_init == 15
    assert s.train.learning_rate == 1e-3 and s.train.optimizer == "adam"
    kc.dump_config(cp, tmp_path / "snap.ini")
    snap = configparser.ConfigParser()
    snap.read(tmp_path / "snap.ini")
    assert "_base_dir" not in snap["experiment"]
    assert kc.experiment_settings(kc.load_config(tmp_path / "snap.ini")) == s


def test_config_collects_every_error(tmp_path):
    ini = tmp_path / "bad.ini"
    ini.write_text(kc.render_config({
        "experiment": {"recipe": "SSC", "seed": "-1", "task": "both"},
        "split": {"maintask_words": "", "train_fraction": "2"},
        "train": {"optimizer": "lbfgs", "batch_size": "x"},
        "epochs": {"finetune": "-3"},
    }))
    with pytest.raises(kc.ConfigError) as exc:
        kc.experiment_settings(kc.load_config(ini))
    text = " ".join(exc.value.errors)
    for field in ("experiment.seed", "experiment.task", "split.maintask_words",
                  "split.train_fraction", "train.optimizer", "train.batch_size",
                  "epochs.finetune", "data.chunked_manifest", "data:"):
        assert field in text, field
