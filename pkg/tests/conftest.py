from __future__ import annotations

import numpy as np
import pytest
import torch

from salt.scorer import ToyScorer
from salt.synth import SyntheticLanguageSpec, generate_corpus
from salt.toy import ToyConfig, ToyEncoder, ToyPairClassifier
from salt.vocab import VocabularyBundle, WordList, build_token_set

SMALL_SPEC = dict(
    languages=("en", "fr", "es", "de"),
    n_categories=3,
    nouns_per_category=3,
    verbs_per_category=2,
    adjectives_per_category=2,
    pretrain_sentences_per_language=60,
    n_train=24,
    n_dev=12,
    n_test=15,
    seed=3,
)


VERDICTS = pytest.StashKey[dict]()


@pytest.fixture
def verdict(request):
    """Records the outcome of an acceptance criterion for the end-of-run summary."""
    marker = request.node.get_closest_marker("criterion")
    name = marker.args[0]
    table = request.config.stash.setdefault(VERDICTS, {})
    table[name] = f"{name} FAIL: did not complete"

    def record(ok: bool, detail: str) -> bool:
        table[name] = f"{name} {'PASS' if ok else 'FAIL'}: {detail}"
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    table = config.stash.get(VERDICTS, {})
    if not table:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(table, key=lambda n: int(n[2:])):
        terminalreporter.write_line(table[name])


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


@pytest.fixture(scope="session")
def small_testbed():
    return generate_corpus(SyntheticLanguageSpec(**SMALL_SPEC))


@pytest.fixture(scope="session")
def tokenizer(small_testbed):
    return small_testbed.tokenizer()


def make_encoder(vocab_size: int, seed: int = 0, dim: int = 16) -> ToyEncoder:
    torch.manual_seed(seed)
    return ToyEncoder(ToyConfig(vocab_size, dim=dim, n_layers=1, n_heads=2, ff_dim=32, max_len=32, dropout=0.0)).eval()


@pytest.fixture(scope="session")
def encoder(tokenizer):
    return make_encoder(tokenizer.vocab_size)


@pytest.fixture(scope="session")
def scorer(encoder, tokenizer):
    return ToyScorer(encoder, tokenizer)


@pytest.fixture(scope="session")
def vocab_sets(small_testbed, tokenizer):
    sets = {}
    for lang in ("en", "fr", "es", "de"):
        sets[lang] = build_token_set(WordList(lang, tuple(small_testbed.frequency_lists[lang])), tokenizer)
    return VocabularyBundle(sets)


@pytest.fixture
def classifier(encoder, tokenizer):
    import copy

    torch.manual_seed(0)
    return ToyPairClassifier(copy.deepcopy(encoder), 3, dropout=0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
