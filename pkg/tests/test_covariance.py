import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from apportion import DenseCovariance, LowRankPlusIsotropic, NumericalError


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), iso=st.floats(1e-3, 1e3), rank=st.integers(0, 6))
def test_low_rank_operator_matches_dense(seed, iso, rank):
    rng = np.random.default_rng(seed)
    p = 12
    f = rng.standard_normal((p, rank))
    dense = f @ f.T + iso * np.eye(p)
    for cov in (LowRankPlusIsotropic(f, iso), DenseCovariance(dense)):
        v = rng.standard_normal((p, 2))
        np.testing.assert_allclose(cov.dense(), dense, rtol=1e-12, atol=1e-12 * iso)
        np.testing.assert_allclose(cov.matvec(v), dense @ v, rtol=1e-10, atol=1e-10)
        np.testing.assert_allclose(cov.solve(v), np.linalg.solve(dense, v), rtol=1e-7, atol=1e-10)
        w = cov.whiten(v)
        # whitening: |W v|^2 = v^T Sigma^{-1} v
        np.testing.assert_allclose(np.sum(w * w, axis=0),
                                   np.einsum("ij,ij->j", v, np.linalg.solve(dense, v)), rtol=1e-7)
        idx, other = np.arange(0, p, 2), np.arange(1, p, 2)
        np.testing.assert_allclose(cov.restrict(idx).dense(), dense[np.ix_(idx, idx)], rtol=1e-12,
                                   atol=1e-12 * iso)
        u = rng.standard_normal(idx.size)
        np.testing.assert_allclose(cov.cross(other, idx, u), dense[np.ix_(other, idx)] @ u,
                                   rtol=1e-10, atol=1e-10)
        assert cov.trace() == pytest.approx(np.trace(dense))
        np.testing.assert_allclose((cov * 2.0).dense(), 2 * dense, rtol=1e-12, atol=1e-12 * iso)


def test_singular_low_rank_is_numerical_error():
    cov = LowRankPlusIsotropic(np.ones((4, 1)), 0.0)
    with pytest.raises(NumericalError):
        cov.solve(np.ones(4))
