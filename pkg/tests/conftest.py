import numpy as np
import pytest

from kwscl import synthetic as syn
from kwscl.corpus import Corpus


@pytest.fixture(scope="session")
def tiny_vocab():
    return syn.make_vocabulary(("alpha", "bravo", "charlie", "delta", "echo"), seed=3)


@pytest.fixture(scope="session")
def tiny_corpus(tiny_vocab):
    """Five words x six clips, in memory."""
    return syn.build_single_word_corpus(tiny_vocab, 6, seed=3, n_speakers=8)


@pytest.fixture(scope="session")
def tiny_bank():
    return syn.build_noise_bank(11, clips_per_category=1, duration_s=1.5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def labelled_corpus(n_words: int, per_word: int, n_speakers: int = 7) -> Corpus:
    """Audio-free labelled corpus, enough for pairing and partition logic."""
    from kwscl.corpus import Utterance
    return Corpus(Utterance(f"w{w}/s{k % n_speakers}_nohash_{k}", word=f"w{w}",
                            speaker=f"s{k % n_speakers}")
                  for w in range(n_words) for k in range(per_word))


@pytest.fixture
def make_labelled():
    return labelled_corpus


ACCEPTANCE_LINES = {}


@pytest.fixture
def criterion(request):
    """Record and print one PASS/FAIL line for an acceptance criterion, then assert."""
    def record(number: int, title: str, ok: bool, detail: str):
        line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
        ACCEPTANCE_LINES[(number, request.node.name)] = line
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
