import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose, assert_array_equal

from anchorstream.exceptions import CheckpointError, DomainError, ShapeError
from anchorstream.memory.fisher import (
    FisherState,
    abs_fisher,
    consolidate,
    ewc_penalty,
    importance,
    squared_fisher,
)

small = st.floats(min_value=-10, max_value=10, allow_nan=False)


def _grads(*rows):
    return [{"w": np.array(row, dtype=float)} for row in rows]


def test_absolute_importance_example():
    assert_allclose(abs_fisher(_grads((1, -3), (3, 1))), [2.0, 2.0])


def test_squared_importance_example():
    assert_allclose(squared_fisher(_grads((1, -3), (3, 1))), [5.0, 5.0])


@given(st.lists(arrays(np.float64, 3, elements=small), min_size=1, max_size=6), st.randoms())
def test_importance_is_invariant_to_sample_order(rows, rnd):
    shuffled = list(rows)
    rnd.shuffle(shuffled)
    assert_allclose(abs_fisher(_grads(*rows)), abs_fisher(_grads(*shuffled)), rtol=1e-12)
    assert np.all(abs_fisher(_grads(*rows)) >= 0)


@given(st.lists(st.lists(st.sampled_from([-1.0, 0.0, 1.0]), min_size=4, max_size=4), min_size=1, max_size=5))
def test_forms_agree_on_unit_gradients(rows):
    assert_allclose(abs_fisher(_grads(*rows)), squared_fisher(_grads(*rows)))


def test_importance_follows_given_name_order():
    grads = [{"a": np.array([1.0]), "b": np.array([2.0, -4.0])}]
    assert_array_equal(abs_fisher(grads, names=["b", "a"]), [2.0, 4.0, 1.0])


def test_importance_dispatch_and_errors():
    assert_allclose(importance(_grads((2,)), "squared"), [4.0])
    with pytest.raises(DomainError):
        importance(_grads((2,)), "cubic")
    with pytest.raises(DomainError):
        abs_fisher([])


def test_first_consolidation_takes_the_new_estimate():
    fs = consolidate(FisherState.empty(2, lambda_=1.0), np.array([4.0, 2.0]), np.array([0.5, 0.5]))
    assert fs.k == 1
    assert_array_equal(fs.F, [4.0, 2.0])
    assert_array_equal(fs.anchor, [0.5, 0.5])


def test_consolidation_keeps_a_running_mean():
    fs = FisherState(F=np.array([4.0, 2.0]), anchor=np.zeros(2), k=1, lambda_=1.0)
    fs = consolidate(fs, np.array([2.0, 4.0]), np.ones(2))
    assert fs.k == 2
    assert_allclose(fs.F, [3.0, 3.0])
    fs = consolidate(fs, np.array([6.0, 0.0]), np.ones(2))
    assert_allclose(fs.F, [4.0, 2.0])


def test_anchor_is_a_detached_copy():
    theta = np.array([1.0, 2.0])
    fs = consolidate(FisherState.empty(2), np.ones(2), theta)
    theta += 10.0
    assert_array_equal(fs.anchor, [1.0, 2.0])


def test_consolidate_rejects_length_mismatch():
    with pytest.raises(ShapeError):
        consolidate(FisherState.empty(2), np.ones(3), np.ones(2))


def test_penalty_example():
    fs = FisherState(F=np.array([2.0, 0.0]), anchor=np.array([0.4, 0.0]), k=1, lambda_=10.0)
    loss, grad = ewc_penalty(fs, np.array([0.5, 5.0]))
    assert loss == pytest.approx(0.1)
    assert_allclose(grad, [2.0, 0.0])


def test_penalty_is_zero_before_any_consolidation():
    fs = FisherState.empty(3, lambda_=100.0)
    loss, grad = ewc_penalty(fs, np.array([1.0, -2.0, 3.0]))
    assert loss == 0.0
    assert_array_equal(grad, np.zeros(3))


def test_penalty_vanishes_at_the_anchor():
    fs = FisherState(F=np.array([3.0, 1.0]), anchor=np.array([0.4, -0.2]), k=2, lambda_=5.0)
    loss, grad = ewc_penalty(fs, fs.anchor.copy())
    assert loss == 0.0
    assert_array_equal(grad, np.zeros(2))


@given(arrays(np.float64, 4, elements=small), arrays(np.float64, 4, elements=st.floats(0, 5)))
def test_penalty_gradient_matches_finite_differences(theta, F):
    fs = FisherState(F=F, anchor=np.linspace(-1, 1, 4), k=1, lambda_=3.0)
    _, grad = ewc_penalty(fs, theta)
    eps = 1e-5
    for i in range(4):
        plus, minus = theta.copy(), theta.copy()
        plus[i] += eps
        minus[i] -= eps
        numeric = (ewc_penalty(fs, plus)[0] - ewc_penalty(fs, minus)[0]) / (2 * eps)
        assert grad[i] == pytest.approx(numeric, rel=1e-5, abs=1e-5)


@given(st.floats(0, 100), st.floats(0, 100))
def test_penalty_is_monotone_in_lambda(lam_a, lam_b):
    lo, hi = sorted((lam_a, lam_b))
    theta = np.array([0.3, -0.7])
    base = dict(F=np.array([1.0, 2.0]), anchor=np.zeros(2), k=1)
    assert ewc_penalty(FisherState(lambda_=lo, **base), theta)[0] <= ewc_penalty(FisherState(lambda_=hi, **base), theta)[0]


def test_penalty_rejects_length_mismatch():
    with pytest.raises(ShapeError):
        ewc_penalty(FisherState.empty(2), np.zeros(3))


def test_state_json_round_trip(tmp_path):
    fs = FisherState(F=np.array([0.25, 1.5]), anchor=np.array([-1.0, 2.0]), k=3, lambda_=10.0)
    path = tmp_path / "fisher.json"
    fs.save(path)
    loaded = FisherState.from_json(json.loads(path.read_text()))
    assert loaded.k == 3 and loaded.lambda_ == 10.0
    assert_array_equal(loaded.F, fs.F)
    assert_array_equal(loaded.anchor, fs.anchor)


def test_state_json_rejects_unknown_version():
    with pytest.raises(CheckpointError):
        FisherState.from_json({"version": 99})
