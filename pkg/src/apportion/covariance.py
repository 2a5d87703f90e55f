"""Covariance operators: low-rank-plus-isotropic and dense.

The low-rank form ``F F^T + iso * I`` is what the feasible estimates and the
simulation population use. It is applied through the thin SVD of ``F`` so a
p x p matrix is never formed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .errors import NumericalError, ValidationError
from .linalg import rank_tolerance


class Covariance:
    """Interface shared by the operators below."""

    dim: int

    def matvec(self, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def whiten(self, v: np.ndarray) -> np.ndarray:
        """Apply an inverse square root W with W^T W = Sigma^{-1}."""
        raise NotImplementedError

    def solve(self, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def restrict(self, idx: np.ndarray) -> "Covariance":
        """Principal sub-block Sigma[idx, idx] as an operator."""
        raise NotImplementedError

    def cross(self, rows: np.ndarray, cols: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Return Sigma[rows, cols] @ v."""
        raise NotImplementedError

    def trace(self) -> float:
        raise NotImplementedError

    def dense(self) -> np.ndarray:
        raise NotImplementedError

    def quad(self, b: np.ndarray) -> np.ndarray:
        """B^T Sigma B for a p x k matrix B."""
        return b.T @ self.matvec(b)

    def __mul__(self, c: float) -> "Covariance":
        raise NotImplementedError

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class LowRankPlusIsotropic(Covariance):
    """Sigma = factor @ factor.T + iso * I_p."""

    factor: np.ndarray
    iso: float
    _u: np.ndarray = field(init=False, repr=False, compare=False)
    _s: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        f = np.asarray(self.factor, dtype=float)
        if f.ndim != 2:
            raise ValidationError("factor must be a p x r matrix")
        if not np.isfinite(self.iso) or self.iso < 0:
            raise ValidationError(f"isotropic term must be finite and >= 0, got {self.iso}")
        object.__setattr__(self, "factor", f)
        if f.shape[1]:
            u, s, _ = np.linalg.svd(f, full_matrices=False)
            keep = s > rank_tolerance(s, f.shape)
            u, s = u[:, keep], s[keep]
        else:
            u, s = np.zeros((f.shape[0], 0)), np.zeros(0)
        object.__setattr__(self, "_u", u)
        object.__setattr__(self, "_s", s)

    @classmethod
    def from_svd(cls, u: np.ndarray, s: np.ndarray, iso: float) -> "LowRankPlusIsotropic":
        return cls(u * s, iso)

    @property
    def dim(self) -> int:
        return self.factor.shape[0]

    @property
    def left_vectors(self) -> np.ndarray:
        return self._u

    @property
    def singular_values(self) -> np.ndarray:
        return self._s

    def _require_definite(self):
        if self.iso <= 0 and self._s.size < self.dim:
            raise NumericalError("covariance is singular (zero isotropic term, low-rank factor)")

    def matvec(self, v):
        f = self.factor
        return f @ (f.T @ v) + self.iso * v

    def whiten(self, v):
        self._require_definite()
        u, s, g = self._u, self._s, self.iso
        uv = u.T @ v
        if g == 0.0:  # full-rank factor
            return u @ (uv / _col(s, v))
        # (1/sqrt g) [ (I - UU^T) v + U diag(sqrt(g/(s^2+g))) U^T v ]; stable as g -> 0
        shrink = np.sqrt(g / (s**2 + g))
        return (v - u @ uv + u @ (_col(shrink, v) * uv)) / np.sqrt(g)

    def solve(self, v):
        self._require_definite()
        u, s, g = self._u, self._s, self.iso
        uv = u.T @ v
        if g == 0.0:
            return u @ (uv / _col(s**2, v))
        return (v - u @ uv) / g + u @ (uv / _col(s**2 + g, v))

    def restrict(self, idx):
        return LowRankPlusIsotropic(self.factor[idx], self.iso)

    def cross(self, rows, cols, v):
        rows, cols = np.asarray(rows), np.asarray(cols)
        out = self.factor[rows] @ (self.factor[cols].T @ v)
        if self.iso:
            # identity block is nonzero only where the index sets overlap
            shared, ri, ci = np.intersect1d(rows, cols, return_indices=True)
            if shared.size:
                out[ri] += self.iso * v[ci]
        return out

    def trace(self):
        return float(np.sum(self.factor**2) + self.iso * self.dim)

    def dense(self):
        return self.factor @ self.factor.T + self.iso * np.eye(self.dim)

    def __mul__(self, c):
        c = float(c)
        if c < 0:
            raise ValidationError("covariance scale must be nonnegative")
        return LowRankPlusIsotropic(self.factor * np.sqrt(c), self.iso * c)

    __rmul__ = __mul__


class DenseCovariance(Covariance):
    """Explicit symmetric p x p covariance, factored lazily by Cholesky."""

    def __init__(self, matrix: np.ndarray):
        m = np.asarray(matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValidationError("covariance must be square")
        if not np.allclose(m, m.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(m).max())):
            raise ValidationError("covariance must be symmetric")
        self.matrix = 0.5 * (m + m.T)
        self._chol = None

    @property
    def dim(self):
        return self.matrix.shape[0]

    def _factor(self):
        if self._chol is None:
            try:
                self._chol = sla.cholesky(self.matrix, lower=True)
            except np.linalg.LinAlgError as exc:
                raise NumericalError("covariance is not positive definite") from exc
        return self._chol

    def matvec(self, v):
        return self.matrix @ v

    def whiten(self, v):
        return sla.solve_triangular(self._factor(), v, lower=True)

    def solve(self, v):
        return sla.cho_solve((self._factor(), True), v)

    def restrict(self, idx):
        return DenseCovariance(self.matrix[np.ix_(idx, idx)])

    def cross(self, rows, cols, v):
        return self.matrix[np.ix_(rows, cols)] @ v

    def trace(self):
        return float(np.trace(self.matrix))

    def dense(self):
        return self.matrix.copy()

    def __mul__(self, c):
        return DenseCovariance(float(c) * self.matrix)

    __rmul__ = __mul__


def as_covariance(sigma) -> Covariance:
    if isinstance(sigma, Covariance):
        return sigma
    return DenseCovariance(sigma)


def _col(d: np.ndarray, like: np.ndarray) -> np.ndarray:
    return d[:, None] if np.ndim(like) == 2 else d
