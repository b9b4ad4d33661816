import numpy as np
import pytest

from anchorstream.verification import OracleVerifier, brute_force_ctc, recursive_edit_distance, relative_error


@pytest.fixture(scope="module")
def verifier():
    return OracleVerifier(seed=0, edit_max_len=3)


@pytest.mark.parametrize(
    "method", ["ctc_brute_force", "ctc_gradient", "model_gradient", "edit_distance", "lora_identity"]
)
def test_oracle_suite_passes(verifier, method):
    result = verifier.verify(method)
    assert result.is_verified, result
    assert result.max_error <= result.tolerance
    assert result.cases_checked > 0


def test_edit_suite_covers_every_pair(verifier):
    # 1 + 2 + 4 + 8 binary strings
    assert verifier.verify("edit_distance").cases_checked == 15**2


def test_edit_suite_defaults_to_length_six():
    # 127 binary strings of length 0..6
    result = OracleVerifier(seed=0).verify("edit_distance")
    assert result.is_verified
    assert result.cases_checked == 127**2
    assert result.verification_details == {"max_len": 6, "alphabet": "ab"}


def test_edit_suite_alphabet_is_configurable():
    result = OracleVerifier(seed=0, edit_max_len=2, edit_alphabet="abc").verify("edit_distance")
    assert result.cases_checked == 13**2


@pytest.mark.parametrize(
    "analytic, numeric, expected",
    [
        ([2e-3], [1e-3], 0.5),
        ([1e-3], [2e-3], 0.5),
        ([5.0, -4.0], [5.0, -5.0], 0.2),
        ([0.0], [0.0], 0.0),
        # below the floor the scale is 1e-4
        ([1e-9], [3e-9], 2e-5),
    ],
)
def test_relative_error_is_scaled_by_the_larger_magnitude(analytic, numeric, expected):
    assert relative_error(np.array(analytic), np.array(numeric)) == pytest.approx(expected)


def test_unknown_method():
    with pytest.raises(ValueError, match="Unknown verification method"):
        OracleVerifier().verify("nonexistent")


def test_recursive_edit_distance_examples():
    assert recursive_edit_distance(tuple("kitten"), tuple("sitting")) == 3
    assert recursive_edit_distance((), (1, 2)) == 2


def test_brute_force_ctc_marks_infeasible_targets():
    assert brute_force_ctc(np.log(np.full((1, 3), 1 / 3)), (0, 0)) == np.inf
