"""Small linear-algebra helpers shared by the estimators.

Everything here goes through orthogonal factorizations (QR / SVD); Gram
matrices are never inverted explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .errors import NumericalError

EPS = np.finfo(float).eps


def rank_tolerance(singular_values: np.ndarray, shape: tuple[int, int]) -> float:
    """Singular values at or below this are treated as zero."""
    if singular_values.size == 0:
        return 0.0
    return EPS * max(shape) * float(np.max(singular_values))


def numerical_rank(a: np.ndarray) -> int:
    if a.size == 0:
        return 0
    s = np.linalg.svd(a, compute_uv=False)
    return int(np.sum(s > rank_tolerance(s, a.shape)))


def sign_normalize(cols: np.ndarray) -> np.ndarray:
    """Flip columns so the largest-magnitude entry of each is positive.

    Near-ties (within 1e-8 relative) resolve to the lowest row index so the
    convention does not depend on last-bit rounding.
    """
    out = np.array(cols, dtype=float, copy=True)
    for j in range(out.shape[1]):
        mag = np.abs(out[:, j])
        top = mag.max()
        if top == 0.0:
            continue
        i = int(np.flatnonzero(mag >= top * (1.0 - 1e-8))[0])
        if out[i, j] < 0:
            out[:, j] = -out[:, j]
    return out


@dataclass(frozen=True)
class LeastSquares:
    """Thin QR of a full-column-rank matrix, reusable for many right-hand sides."""

    q: np.ndarray
    r: np.ndarray

    @classmethod
    def factor(cls, a: np.ndarray, what: str = "matrix") -> "LeastSquares":
        a = np.asarray(a, dtype=float)
        m, k = a.shape
        if k == 0:
            return cls(np.zeros((m, 0)), np.zeros((0, 0)))
        if k > m:
            raise NumericalError(f"{what} has more columns ({k}) than rows ({m})")
        q, r = sla.qr(a, mode="economic")
        # |diag R| is not rank revealing on its own; confirm with singular values of R.
        s = np.linalg.svd(r, compute_uv=False)
        tol = rank_tolerance(s, a.shape)
        rank = int(np.sum(s > tol))
        if rank < k:
            raise NumericalError(f"{what} is rank deficient: rank {rank} < {k} columns")
        return cls(q, r)

    @property
    def ncols(self) -> int:
        return self.r.shape[1]

    def coef(self, y: np.ndarray) -> np.ndarray:
        """Least-squares coefficients for y of shape (m,) or (m, R)."""
        if self.ncols == 0:
            return np.zeros((0,) + np.shape(y)[1:])
        return sla.solve_triangular(self.r, self.q.T @ y)

    def residual(self, y: np.ndarray) -> np.ndarray:
        return y - self.q @ (self.q.T @ y)

    def gram_solve(self, v: np.ndarray) -> np.ndarray:
        """Apply (A^T A)^{-1} via R^{-1} R^{-T}."""
        w = sla.solve_triangular(self.r, v, trans="T")
        return sla.solve_triangular(self.r, w)

    def gram_inverse_sqrt_of(self, v: np.ndarray) -> np.ndarray:
        """Return R^{-T} v, so that (R^{-T}v)^T (R^{-T}v) = v^T (A^T A)^{-1} v."""
        return sla.solve_triangular(self.r, v, trans="T")


def lstsq(a: np.ndarray, y: np.ndarray, what: str = "matrix") -> np.ndarray:
    return LeastSquares.factor(a, what).coef(y)


def orthonormal_complement(q: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the complement of span(q), q with orthonormal columns."""
    p, k = q.shape
    if k == 0:
        return np.eye(p)
    full, _ = sla.qr(q, mode="full")
    return full[:, k:]


def sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)
