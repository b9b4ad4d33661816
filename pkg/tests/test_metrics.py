import itertools

import pytest
from hypothesis import given
from hypothesis import strategies as st

from anchorstream.exceptions import DomainError, UndefinedRateError
from anchorstream.schemas.reports import BaselineReport, ExperimentResult, SegmentReport
from anchorstream.services.metrics import (
    corpus_rate,
    edit_ops,
    forgetting,
    pareto_summary,
    rates,
    relative_improvement,
)
from anchorstream.verification import recursive_edit_distance

seqs = st.lists(st.integers(0, 2), max_size=6)


@pytest.mark.parametrize(
    "ref, hyp, counts",
    [
        ("abc", "axc", (1, 0, 0)),
        ("a", "", (0, 1, 0)),
        ("", "ab", (0, 0, 2)),
        ("abc", "abc", (0, 0, 0)),
        ("abcd", "bcd", (0, 1, 0)),
        ("ab", "ba", (2, 0, 0)),
    ],
)
def test_edit_ops_examples(ref, hyp, counts):
    ops = edit_ops(tuple(ref), tuple(hyp))
    assert (ops.substitutions, ops.deletions, ops.insertions) == counts
    assert ops.ref_length == len(ref)


def test_edit_cost_matches_recursive_definition_on_short_pairs():
    words = [w for n in range(4) for w in itertools.product(range(3), repeat=n)]
    for a, b in itertools.product(words, repeat=2):
        assert edit_ops(a, b).cost == recursive_edit_distance(a, b)


def test_edit_cost_matches_recursive_definition_on_every_binary_pair_up_to_six():
    words = [w for n in range(7) for w in itertools.product(range(2), repeat=n)]
    assert len(words) == 127
    for a, b in itertools.product(words, repeat=2):
        assert edit_ops(a, b).cost == recursive_edit_distance(a, b), (a, b)


@given(seqs, seqs)
def test_edit_cost_matches_recursive_definition_up_to_six(a, b):
    assert edit_ops(a, b).cost == recursive_edit_distance(tuple(a), tuple(b))


@given(seqs, seqs)
def test_edit_cost_is_symmetric(a, b):
    forward, backward = edit_ops(a, b), edit_ops(b, a)
    assert forward.cost == backward.cost
    assert forward.deletions - forward.insertions == backward.insertions - backward.deletions
    assert forward.substitutions + forward.deletions <= len(a)


@given(seqs, seqs, seqs)
def test_edit_cost_triangle_inequality(a, b, c):
    assert edit_ops(a, c).cost <= edit_ops(a, b).cost + edit_ops(b, c).cost


def test_rate_of_exact_matches_is_zero():
    assert corpus_rate([((1, 2), (1, 2)), ((3,), (3,))]) == 0.0


def test_rate_is_pooled_not_averaged():
    pairs = [((0, 1, 2, 3), (0, 1, 2, 0)), ((5,), ())]
    assert corpus_rate(pairs) == pytest.approx(40.0)


def test_single_utterance_rate():
    assert corpus_rate([((0, 1, 2), (0, 4, 2))]) == pytest.approx(100 / 3)


def test_rate_can_exceed_one_hundred():
    assert corpus_rate([((0,), (1, 2, 3))]) == pytest.approx(300.0)


@given(st.lists(st.tuples(st.lists(st.integers(0, 5), min_size=1, max_size=4), seqs), min_size=1, max_size=6), st.randoms())
def test_rate_ignores_utterance_order(pairs, rnd):
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    assert corpus_rate(shuffled) == pytest.approx(corpus_rate(pairs))


def test_character_rate_is_finer_than_word_rate():
    # 5 = (1, 1) and 6 = (1, 2): one wrong word, one wrong character out of two
    assert corpus_rate([((5,), (6,))], "word") == pytest.approx(100.0)
    assert corpus_rate([((5,), (6,))], "character") == pytest.approx(50.0)
    assert rates([((5,), (6,))]) == {"wer": pytest.approx(100.0), "cer": pytest.approx(50.0)}


def test_empty_references_are_undefined():
    with pytest.raises(UndefinedRateError):
        corpus_rate([((), (1,))])
    with pytest.raises(UndefinedRateError):
        corpus_rate([])


@pytest.mark.parametrize("baseline, current, expected", [(11.57, 17.50, 5.93), (11.57, 14.23, 2.66), (9.0, 9.0, 0.0)])
def test_forgetting(baseline, current, expected):
    assert forgetting(baseline, current) == pytest.approx(expected)


@pytest.mark.parametrize("baseline, final, expected", [(40.94, 33.94, 17.1), (40.94, 34.00, 17.0), (30.0, 30.0, 0.0)])
def test_relative_improvement(baseline, final, expected):
    assert relative_improvement(baseline, final) == pytest.approx(expected, abs=0.05)


def test_relative_improvement_with_zero_baseline():
    assert relative_improvement(0.0, 5.0) == 0.0


def _result(preset, final_target, final_general):
    report = SegmentReport(
        segment=1,
        target_wer=final_target,
        target_cer=0.0,
        general_wer=final_general,
        general_cer=0.0,
        forgetting=final_general - 11.57,
        mean_train_loss=1.0,
        max_grad_norm=1.0,
    )
    baseline = BaselineReport(target_wer=40.94, target_cer=0.0, general_wer=11.57, general_cer=0.0)
    return ExperimentResult(preset=preset, seed=7, baseline=baseline, reports=[report], base_fingerprint="x")


def test_pareto_rows_follow_mapping_order():
    rows = pareto_summary({"V1.1": _result("V1.1", 34.00, 17.50), "V3.1": _result("V3.1", 35.36, 14.23)})
    assert [row.paradigm for row in rows] == ["V1.1", "V3.1"]
    assert rows[0].relative_improvement == pytest.approx(17.0, abs=0.05)
    assert rows[0].forgetting == pytest.approx(5.93)
    assert rows[1].final_general_wer == 14.23


def test_pareto_needs_reports():
    empty = _result("V1.1", 1.0, 1.0).model_copy(update={"reports": []})
    with pytest.raises(DomainError):
        pareto_summary({"V1.1": empty})
