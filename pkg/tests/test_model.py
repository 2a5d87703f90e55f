import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _instances import FIXTURE_X, random_basis
from apportion import (Dictionary, NumericalError, Profile, SourceDesign, ValidationError,
                       build_design, decompose)
from apportion.linalg import sign_normalize
from apportion.model import profile_vector


def test_fixture_group_means_and_residuals(fixture1):
    np.testing.assert_allclose(fixture1.group_means, [[.5, 0], [.5, 0], [.5, 1], [0, 0]], atol=1e-15)
    s = np.sqrt(0.5)
    np.testing.assert_allclose(fixture1.null_basis[:, 0], [s, -s, 0], atol=1e-15)
    np.testing.assert_allclose(fixture1.residuals[:, 0], [s, -s, -s, 0], atol=1e-15)


def test_fixture_gram_matrices(fixture1):
    np.testing.assert_allclose(fixture1.rts_gram(), [[2, -1], [-1, 2]], atol=1e-13)
    np.testing.assert_allclose(fixture1.mean_gram_inverse(), [[2, -1], [-1, 1.5]], atol=1e-13)


def test_sign_convention_largest_entry_positive():
    cols = np.array([[0.6, -0.1], [-0.8, 0.1]])
    out = sign_normalize(cols)
    np.testing.assert_array_equal(out, [[-0.6, 0.1], [0.8, -0.1]])


def test_sign_convention_ties_go_to_lowest_index():
    out = sign_normalize(np.array([[-0.5], [0.5]]))
    assert out[0, 0] > 0


def test_dictionary_needs_more_features_than_profiles():
    with pytest.raises(ValidationError, match="fewer profiles than features"):
        Dictionary.from_array(np.ones((3, 3)))


def test_dictionary_rejects_duplicate_ids():
    with pytest.raises(ValidationError, match="duplicate"):
        Dictionary(np.eye(3)[:, :2], ("a", "a", "b"), ("x", "y"))


def test_dictionary_rejects_non_finite():
    x = np.eye(3)[:, :2]
    x[0, 0] = np.nan
    with pytest.raises(ValidationError):
        Dictionary.from_array(x)


@pytest.mark.parametrize("weights, message", [
    ([[1.0, 0], [-0.5, 1.5]], "negative"),
    ([[0.5, 0.4], [0, 1]], "sum"),
    ([[1.0, 0], [1.0, 0]], "category"),
])
def test_design_validation(weights, message):
    with pytest.raises(ValidationError, match=message):
        SourceDesign(np.array(weights), ("a", "b"))


def test_build_design_from_labels():
    d = build_design(["b", "a", "b"], ["a", "b"])
    np.testing.assert_array_equal(d.weights, [[0, 1], [1, 0], [0, 1]])
    assert d.is_indicator() and d.labels() == ["b", "a", "b"]


def test_build_design_unknown_label():
    with pytest.raises(ValidationError):
        build_design(["a", "c"], ["a", "b"])


def test_rank_deficient_dictionary_is_numerical_error():
    x = np.array([[1.0, 2], [2, 4], [3, 6]])
    with pytest.raises(NumericalError):
        decompose(Dictionary.from_array(x), build_design(["a", "b"], ["a", "b"]))


def test_design_row_mismatch():
    with pytest.raises(ValidationError):
        decompose(Dictionary.from_array(FIXTURE_X), build_design(["a", "b"], ["a", "b"]))


def test_profile_marks_unobserved_as_nan():
    p = Profile(np.array([1.0, 2.0]), ("a", "b"), np.array([True, False]))
    assert np.isnan(p.values[1]) and not p.fully_observed
    with pytest.raises(ValidationError, match="unobserved"):
        profile_vector(p, 2)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_decomposition_invariants(seed):
    rng = np.random.default_rng(seed)
    b = random_basis(rng)
    n, K = b.n, b.K
    a, x = b.A, b.X
    # group means from the normal equations
    np.testing.assert_allclose(b.group_means, x @ a @ np.linalg.inv(a.T @ a), atol=1e-10)
    nb = b.null_basis
    assert nb.shape == (n, n - K)
    np.testing.assert_allclose(nb.T @ a, 0, atol=1e-12)
    np.testing.assert_allclose(nb.T @ nb, np.eye(n - K), atol=1e-12)
    # X = M A^T + E N^T: the dictionary splits into the two parts exactly
    np.testing.assert_allclose(b.group_means @ a.T + b.residuals @ nb.T, x, atol=1e-10)
    np.testing.assert_allclose(b.rts_gram(), a.T @ np.linalg.inv(x.T @ x) @ a, rtol=1e-8, atol=1e-12)
