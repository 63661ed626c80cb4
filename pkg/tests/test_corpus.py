import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kwscl import corpus as cp
from kwscl.audio_io import AudioClip, save_wav, synth_bursts, synth_sine
from kwscl.corpus import (AlignmentRow, Corpus, CorpusError, LabelSealError, SplitPlan,
                          Utterance)


def test_duplicate_ids_rejected():
    with pytest.raises(CorpusError):
        Corpus([Utterance("a", "x"), Utterance("a", "y")])


def test_bad_tags_rejected():
    with pytest.raises(CorpusError):
        Utterance("a", set_tag="set3")
    with pytest.raises(CorpusError):
        Utterance("a", source="podcast")


def test_ingest_directory(tmp_path):
    for word in ("yes", "no"):
        (tmp_path / word).mkdir()
        for k in range(3):
            save_wav(tmp_path / word / f"spk{k}_nohash_{k}.wav",
                     synth_sine(300.0 + k, 0.5, sample_rate=8000))
    (tmp_path / "no" / "broken.wav").write_bytes(b"junk")
    corpus = cp.ingest_single_word_corpus(tmp_path)
    assert len(corpus) == 6 and corpus.skipped == 1
    assert corpus.words() == ["no", "yes"]
    u = corpus["yes/spk1_nohash_1"]
    assert u.speaker == "spk1" and u.word == "yes"
    assert corpus.audio(u.id).sample_rate == 16000
    assert corpus.duration(u.id) == pytest.approx(0.5)


def test_ingest_empty(tmp_path):
    with pytest.raises(CorpusError):
        cp.ingest_single_word_corpus(tmp_path)
    with pytest.raises(CorpusError):
        cp.ingest_single_word_corpus(tmp_path / "nope")


def test_sealed_corpus_refuses_labels(make_labelled):
    sealed = make_labelled(2, 3).seal()
    assert sealed.label_reads == 0
    ids = [u.id for u in sealed]
    assert [u.set_tag for u in sealed] == ["none"] * 6
    with pytest.raises(LabelSealError):
        sealed[ids[0]].word
    with pytest.raises(LabelSealError):
        sealed.words()
    assert sealed.label_reads == 2
    sub = sealed.select(ids[:2])
    with pytest.raises(LabelSealError):
        next(iter(sub)).word
    assert sealed.label_reads == 3
    assert "word" not in sealed[ids[0]].to_record()


def test_manifest_round_trip(tmp_path, make_labelled):
    corpus = make_labelled(2, 3).retag("set2")
    cp.write_corpus_manifest(tmp_path / "c.jsonl", corpus)
    back = cp.read_corpus_manifest(tmp_path / "c.jsonl")
    assert list(back) == list(corpus)
    cp.write_corpus_manifest(tmp_path / "s.jsonl", corpus.seal())
    sealed = cp.read_corpus_manifest(tmp_path / "s.jsonl")
    assert sealed.sealed and sealed.ids == corpus.ids


def test_manifest_mixed_sealing(tmp_path):
    p = tmp_path / "m.jsonl"
    p.write_text(json.dumps({"id": "a", "sealed": True}) + "\n" + json.dumps({"id": "b"}) + "\n")
    with pytest.raises(CorpusError):
        cp.read_corpus_manifest(p)
    p.write_text('{"word": "x"}\n')
    with pytest.raises(CorpusError):
        cp.read_corpus_manifest(p)


def test_manifest_relative_paths(tmp_path):
    save_wav(tmp_path / "a.wav", synth_sine(200.0, 0.2))
    (tmp_path / "m.jsonl").write_text(json.dumps({"id": "a", "word": "x", "path": "a.wav"}) + "\n")
    corpus = cp.read_corpus_manifest(tmp_path / "m.jsonl")
    assert len(corpus.audio("a")) == 3200


def test_alignment_chunking(tmp_path):
    audio = {"book": AudioClip(np.arange(16000) / 16000)}
    rows = [AlignmentRow("book", "hello", 0.1, 0.5), AlignmentRow("book", "there", 0.5, 0.55)]
    cp.write_alignment_tsv(tmp_path / "a.tsv", rows)
    assert cp.read_alignment_tsv(tmp_path / "a.tsv") == rows
    chunks = cp.chunk_by_manifest(audio, rows)
    first = chunks.audio(chunks.ids[0]).samples
    assert len(first) == 6400 and first[0] == pytest.approx(0.1)
    assert chunks[chunks.ids[1]].source == cp.CHUNKED
    kept = cp.filter_min_duration(chunks, 0.4)
    assert kept.ids == chunks.ids[:1]


@pytest.mark.parametrize("row", [AlignmentRow("book", "x", 0.5, 0.4),
                                 AlignmentRow("book", "x", 0.5, 1.5),
                                 AlignmentRow("tape", "x", 0.1, 0.2)])
def test_alignment_bounds(row):
    with pytest.raises(CorpusError):
        cp.chunk_by_manifest({"book": AudioClip(np.zeros(16000))}, [row])


def test_alignment_field_count(tmp_path):
    (tmp_path / "a.tsv").write_text("book\tx\t0.1\n")
    with pytest.raises(CorpusError):
        cp.read_alignment_tsv(tmp_path / "a.tsv")


@st.composite
def schedules(draw):
    n = draw(st.integers(1, 5))
    t, segs = 0.1, []
    for _ in range(n):
        t += draw(st.integers(12, 50)) / 100
        length = draw(st.integers(10, 60)) / 100
        segs.append((round(t, 2), round(t + length, 2)))
        t += length
    return segs, t + 0.2


@given(schedules(), st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_vad_recovers_burst_schedule(sched, seed):
    segs, dur = sched
    clip, truth = synth_bursts(segs, dur, seed=seed)
    found = cp.chunk_by_vad(clip)
    assert len(found) == len(truth)
    for (a, b), (fa, fb) in zip(truth, found):
        assert abs(fa - a) <= 0.030 + 1e-9 and abs(fb - b) <= 0.030 + 1e-9
    assert all(found[i][1] <= found[i + 1][0] for i in range(len(found) - 1))


def test_vad_on_silence_and_tiny_clip():
    assert cp.chunk_by_vad(AudioClip(np.zeros(16000))) == []
    assert cp.chunk_by_vad(AudioClip(np.zeros(10))) == []


def test_pad_or_crop():
    x = AudioClip(np.arange(20000, dtype=float) / 20000)
    cropped = cp.pad_or_crop_clip(x)
    assert len(cropped) == 16000 and cropped.samples[0] == x.samples[2000]
    short = AudioClip(np.ones(1000))
    padded = cp.pad_or_crop_clip(short).samples
    assert len(padded) == 16000 and padded.sum() == 1000 and padded[7500] == 1.0
    same = AudioClip(np.ones(16000))
    assert cp.pad_or_crop_clip(same) is same


def test_split_plan_validation():
    with pytest.raises(CorpusError):
        SplitPlan(("a",), ("a",))
    with pytest.raises(CorpusError):
        SplitPlan(("a",), ("b",), train_fraction=1.0)


def test_partition_labelled(make_labelled):
    corpus = make_labelled(12, 10)
    pre = tuple(f"w{i}" for i in range(8))
    main = ("w8", "w9", "w10")
    part = cp.partition(corpus, SplitPlan(pre, main, seed=4))
    assert set(part.pretask_train.words()) == set(pre)
    assert set(part.set1.words()).isdisjoint(part.set2.words())
    assert len(part.set1.words()) == 2
    assert {u.set_tag for u in part.set1} == {"set1"}
    assert {u.set_tag for u in part.set2} == {"set2"}
    train, test = set(part.maintask_train.ids), set(part.maintask_test.ids)
    assert not train & test and len(train) == 24 and len(test) == 6
    assert part.unused.words() == ["w11"]
    again = cp.partition(corpus, SplitPlan(pre, main, seed=4))
    assert again.maintask_test.ids == part.maintask_test.ids


def test_partition_unknown_word(make_labelled):
    with pytest.raises(CorpusError):
        cp.partition(make_labelled(2, 3), SplitPlan(("w0",), ("zzz",)))


def test_partition_sealed_never_reads_labels(make_labelled):
    sealed = make_labelled(5, 20).seal()
    part = cp.partition(sealed, SplitPlan(seed=2, set1_fraction=0.3))
    assert sealed.label_reads == 0
    assert len(part.set1) == 30 and len(part.set2) == 70
    assert part.pretask_train.sealed
    tags = {u.id: u.set_tag for u in part.pretask_train}
    assert set(tags.values()) == {"set1", "set2"}
    assert all(tags[i] == "set1" for i in part.set1.ids)
    assert len(part.maintask_train) == 0


def test_vad_reference_schedule():
    clip, truth = synth_bursts([(0.2, 0.5), (1.0, 1.3)], 1.5)
    found = cp.chunk_by_vad(clip)
    assert len(found) == 2
    for (a, b), (fa, fb) in zip(truth, found):
        assert abs(fa - a) <= 0.030 + 1e-9 and abs(fb - b) <= 0.030 + 1e-9


def test_vad_continuous_tone_is_one_segment():
    assert cp.chunk_by_vad(synth_sine(300.0, 1.0)) == [(0.0, 1.0)]


@given(st.floats(0.2, 0.8), st.floats(0.1, 0.5))
@settings(max_examples=30, deadline=None)
def test_vad_off_grid_error_bounded_by_hangover_plus_frame(start, length):
    clip, truth = synth_bursts([(start, start + length)], start + length + 0.3)
    (fa, fb), = cp.chunk_by_vad(clip)
    assert abs(fa - start) <= 0.010 + 1e-9
    assert 0.0 <= fb - (start + length) <= 0.040 + 1e-9
