import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _instances import random_basis
from apportion import (Dictionary, ValidationError, bias_envelope, build_design, decompose,
                       gamma_threshold, standard_errors_rts, subspace_bases, variance_profiles)
from apportion.variability import (crossover_matrices, rts_variance_diag,
                                   threshold_from_matrices)


def test_fixture_crossover_matrices(fixture1):
    v1, v2 = crossover_matrices(fixture1)
    np.testing.assert_allclose(v1, [[0, 0], [0, 0.5]], atol=1e-12)
    np.testing.assert_allclose(v2, [[0, 0], [0, 0.5]], atol=1e-12)
    assert gamma_threshold(fixture1) == pytest.approx(1.0, abs=1e-10)


def test_fixture_variance_profiles_meet_at_threshold(fixture1):
    vp = variance_profiles(fixture1, 1.0)
    np.testing.assert_allclose(vp.v_atr, [[2, -1], [-1, 2]], atol=1e-12)
    np.testing.assert_allclose(vp.v_rts, [[2, -1], [-1, 2]], atol=1e-12)


def test_fixture_standard_errors(fixture1):
    np.testing.assert_allclose(standard_errors_rts(fixture1, [1.0, 0, 0, 1]),
                               [[2, -1], [-1, 2]], atol=1e-12)


def test_threshold_zero_when_every_profile_is_a_category():
    x = np.array([[1.0, 0], [0, 1], [1, 1]])
    b = decompose(Dictionary.from_array(x), build_design(["a", "b"], ["a", "b"]))
    assert gamma_threshold(b) == 0.0


def test_threshold_infinite_when_residuals_orthogonal_to_means():
    x = np.eye(4)[:, :3]
    b = decompose(Dictionary.from_array(x), build_design(["a", "a", "b"], ["a", "b"]))
    with pytest.warns(RuntimeWarning, match="unbounded"):
        assert gamma_threshold(b) == np.inf


def test_threshold_matrices_cases():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert threshold_from_matrices(np.zeros((2, 2)), np.diag([1.0, 0])) == np.inf
    assert threshold_from_matrices(np.eye(2), np.zeros((2, 2))) == 0.0
    assert threshold_from_matrices(np.diag([1.0, 2]), np.diag([3.0, 1])) == pytest.approx(0.5)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_threshold_agrees_with_scan(seed):
    # brute force: largest gamma on a grid with v_atr - v_rts >= 0
    rng = np.random.default_rng(seed)
    b = random_basis(rng, min_per=2)
    tau = gamma_threshold(b)
    g, v2 = crossover_matrices(b)[0], crossover_matrices(b)[1]
    scale = max(np.abs(g).max(), np.abs(v2).max())

    def ok(gamma):
        return np.linalg.eigvalsh(v2 - gamma * g).min() >= -1e-9 * scale * (1 + gamma)

    if np.isinf(tau):
        assert ok(1e6)
    else:
        assert ok(tau * 0.999)
        assert not ok(tau * 1.01 + 1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), gamma=st.floats(1e-3, 1e3))
def test_variance_profiles_match_dense_sandwich(seed, gamma):
    rng = np.random.default_rng(seed)
    b = random_basis(rng, min_per=2)
    sigma = b.scatter_dense() + gamma * np.eye(b.p)
    m = b.group_means
    ga = np.linalg.inv(m.T @ m) @ m.T          # ATR weights
    gr = b.A.T @ np.linalg.pinv(b.X)            # RTS weights
    vp = variance_profiles(b, gamma)
    tol = 1e-7 * np.abs(ga @ sigma @ ga.T).max()
    np.testing.assert_allclose(vp.v_atr, ga @ sigma @ ga.T, atol=tol)
    np.testing.assert_allclose(vp.v_rts, gr @ sigma @ gr.T, atol=1e-7 * np.abs(vp.v_rts).max())


def test_standard_errors_batch_and_validation(rng):
    b = random_basis(rng, min_per=2)
    ys = rng.standard_normal((b.p, 3))
    batch = standard_errors_rts(b, ys)
    assert batch.shape == (3, b.K, b.K)
    np.testing.assert_allclose(batch[1], standard_errors_rts(b, ys[:, 1]))
    resid = ys[:, 1] - b.X @ np.linalg.lstsq(b.X, ys[:, 1], rcond=None)[0]
    np.testing.assert_allclose(batch[1], resid @ resid / (b.p - b.n) * b.rts_gram(), rtol=1e-8)


def test_subspace_bases_are_orthogonal_and_complete(rng):
    b = random_basis(rng, min_per=2)
    sb = subspace_bases(b)
    u = np.hstack([sb.u1, sb.u2, sb.u3])
    assert u.shape == (b.p, b.p)
    np.testing.assert_allclose(u.T @ u, np.eye(b.p), atol=1e-10)


def test_bias_envelope_exact_in_ideal_model(rng):
    # Sigma = S + gamma I with mean in span(X): expected bias is zero
    b = random_basis(rng, min_per=2)
    sigma = b.scatter_dense() + 0.8 * np.eye(b.p)
    env = bias_envelope(b, b.group_means, sigma, theta=np.ones(b.K) / b.K)
    lo, hi, exact = env.as_arrays()
    tol = 1e-10 * np.diag(b.rts_gram()).max()
    # U2 is orthogonal to the residual profiles, so the envelope collapses to zero too
    np.testing.assert_allclose(np.stack([lo, exact, hi]), 0, atol=tol)


def test_bias_envelope_without_theta_is_upper_estimate(rng):
    b = random_basis(rng, min_per=2)
    mean = b.group_means + 0.2 * rng.standard_normal(b.group_means.shape)
    sigma = np.diag(rng.uniform(0.5, 1.5, b.p))
    theta = rng.dirichlet(np.ones(b.K))
    with_t = bias_envelope(b, mean, sigma, theta).as_arrays()[2]
    without = bias_envelope(b, mean, sigma).as_arrays()[2]
    assert np.all(without >= with_t - 1e-12)


def test_bias_envelope_validation(fixture1):
    with pytest.raises(ValidationError):
        bias_envelope(fixture1, np.zeros((3, 2)), np.eye(4))


def test_rts_variance_diag_dense(rng):
    b = random_basis(rng)
    f = rng.standard_normal((b.p, 2))
    sigma = f @ f.T + np.eye(b.p)
    w = b.A.T @ np.linalg.pinv(b.X)
    np.testing.assert_allclose(rts_variance_diag(b, sigma), np.diag(w @ sigma @ w.T), rtol=1e-8)


def test_fixture_gap_is_linear_in_gamma(fixture1):
    vp = variance_profiles(fixture1, 0.5)
    np.testing.assert_allclose(vp.v_atr - vp.v_rts, [[0, 0], [0, 0.25]], atol=1e-12)


def test_every_profile_a_category_favours_atr():
    x = np.array([[1.0, 0], [0.5, 1], [1, 1]])
    b = decompose(Dictionary.from_array(x), build_design(["a", "b"], ["a", "b"]))
    vp = variance_profiles(b, 0.7)
    assert np.linalg.eigvalsh(vp.v_rts - vp.v_atr).min() >= -1e-12


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_residual_scatter_cancels_from_rts_weights(seed):
    rng = np.random.default_rng(seed)
    b = random_basis(rng, min_per=2)
    np.testing.assert_allclose(b.rts_weights().T @ b.residuals, 0,
                               atol=1e-10 * max(1.0, np.abs(b.residuals).max()))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), c=st.floats(0.01, 100))
def test_standard_errors_scale_quadratically(seed, c):
    rng = np.random.default_rng(seed)
    b = random_basis(rng)
    y = rng.standard_normal(b.p)
    np.testing.assert_allclose(standard_errors_rts(b, c * y), c**2 * standard_errors_rts(b, y),
                               rtol=1e-9)


def test_loewner_crossover_on_log_grid():
    rng = np.random.default_rng(41)
    checked = 0
    while checked < 50:
        K = int(rng.integers(1, 4))
        b = random_basis(rng, K=K, n=int(rng.integers(2 * K + 1, 16)))
        v1, _ = crossover_matrices(b)
        if np.linalg.eigvalsh(v1).min() <= 1e-8 * np.abs(v1).max():
            continue
        tau = gamma_threshold(b)
        for g in tau * np.logspace(-2, 2, 41):
            if abs(g / tau - 1) < 1e-3:
                continue  # the boundary itself is decided by rounding
            vp = variance_profiles(b, g)
            holds = np.linalg.eigvalsh(vp.v_atr - vp.v_rts).min() >= -1e-10
            assert holds == (g <= tau), (checked, g, tau)
        checked += 1
