import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from anchorstream.core.lm import CharNgramLM, train_lm
from anchorstream.exceptions import DomainError

corpora = st.lists(st.lists(st.integers(0, 3), max_size=5), min_size=1, max_size=8)


@given(corpora, st.integers(1, 4))
def test_every_row_is_a_distribution(corpus, order):
    lm = train_lm(corpus, order=order, vocab_size=4)
    for row in lm.table.values():
        assert_allclose(np.exp(row).sum(), 1.0, rtol=1e-12)


def test_unseen_context_is_uniform():
    lm = train_lm([(0, 1)], order=3, vocab_size=3)
    assert lm.logprob(2, (2, 2)) == pytest.approx(-np.log(4))


def test_counts_and_smoothing():
    lm = train_lm([(0, 1), (0, 0)], order=2, smoothing=1.0, vocab_size=2)
    # context <s>: token 0 twice, out of 2 events, 3 symbols
    assert lm.logprob(0, ()) == pytest.approx(np.log(3 / 5))
    assert lm.logprob(1, ()) == pytest.approx(np.log(1 / 5))
    # context 0: 1, 0 and eos once each
    assert lm.end_logprob((0,)) == pytest.approx(np.log(2 / 6))


def test_unigram_model_ignores_history():
    lm = train_lm([(0, 0, 1)], order=1, vocab_size=2)
    assert lm.logprob(0, (1,)) == lm.logprob(0, ())


def test_sequence_logprob_includes_end_of_sentence():
    lm = train_lm([(0, 1)], order=2, vocab_size=2)
    with_eos = lm.sequence_logprob((0, 1))
    assert with_eos == pytest.approx(lm.sequence_logprob((0, 1), include_eos=False) + lm.end_logprob((0, 1)))


def test_in_domain_text_has_lower_perplexity():
    train = [(0, 1, 2)] * 20
    lm = train_lm(train, order=3, vocab_size=4)
    assert lm.perplexity(train) < lm.perplexity([(3, 3, 3)] * 5)


@pytest.mark.parametrize("order", [1, 2, 3])
def test_huge_smoothing_approaches_the_uniform_model(order):
    lm = train_lm([(0, 1, 2, 2, 2), (1, 1)], order=order, smoothing=1e9, vocab_size=3)
    for row in lm.table.values():
        assert_allclose(np.exp(row), 0.25, atol=1e-3)


@given(corpora, st.integers(1, 4), st.floats(0.01, 10.0))
def test_training_corpus_is_no_more_perplexing_than_uniform(corpus, order, smoothing):
    lm = train_lm(corpus, order=order, smoothing=smoothing, vocab_size=4)
    # uniform over 4 labels plus end-of-sentence
    assert lm.perplexity(corpus) <= 5.0 * (1 + 1e-12)


def test_bigram_prefers_the_repeated_symbol():
    a, b = 0, 1
    lm = train_lm([(a, a, a, a)], order=2, vocab_size=2)
    assert lm.logprob(a, (a,)) > lm.logprob(b, (a,))


def test_save_creates_parent_directories_and_no_temp_files(tmp_path):
    path = tmp_path / "nested" / "lm.json"
    train_lm([(0, 1)], order=2, vocab_size=2).save(path)
    assert [p.name for p in path.parent.iterdir()] == ["lm.json"]
    assert json.loads(path.read_text())["order"] == 2


def test_json_round_trip_preserves_scores(tmp_path):
    lm = train_lm([(0, 1, 2), (2, 1)], order=3, vocab_size=3)
    path = tmp_path / "lm.json"
    lm.save(path)
    loaded = CharNgramLM.load(path)
    for seq in [(0, 1, 2), (2, 2), ()]:
        assert loaded.sequence_logprob(seq) == pytest.approx(lm.sequence_logprob(seq))


@pytest.mark.parametrize(
    "corpus, kwargs",
    [([], {}), ([(0,)], {"order": 0}), ([(0,)], {"smoothing": 0.0}), ([(0, 5)], {"vocab_size": 3})],
)
def test_invalid_training_input(corpus, kwargs):
    with pytest.raises(DomainError):
        train_lm(corpus, **kwargs)


def test_perplexity_of_empty_corpus_is_an_error():
    with pytest.raises(DomainError):
        train_lm([(0,)]).perplexity([])
