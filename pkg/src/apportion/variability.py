"""Variance of the ATR and RTS estimates and the RTS standard errors.

All variance outputs use the scale convention Var[y] = ||theta||^2 (S + gamma I)
and are reported per unit ||theta||^2.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .covariance import as_covariance
from .errors import ValidationError
from .estimators import _check_gamma
from .linalg import orthonormal_complement, sym
from .model import ApportionmentBasis, profile_vector

# relative size below which an eigenvalue of V1 is treated as zero
THRESHOLD_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class VarianceProfile:
    v_atr: np.ndarray
    v_rts: np.ndarray
    gamma: float
    note: str = "per unit ||theta||^2, Sigma_gamma = S + gamma*I"


@dataclass(frozen=True, eq=False)
class SubspaceBases:
    u1: np.ndarray
    u2: np.ndarray
    u3: np.ndarray


@dataclass(frozen=True)
class BiasBound:
    lower: float
    upper: float
    exact_expected_bias: float


@dataclass(frozen=True, eq=False)
class BiasEnvelope:
    categories: tuple[str, ...]
    bounds: tuple[BiasBound, ...]
    theta_used: bool

    def as_arrays(self):
        lo = np.array([b.lower for b in self.bounds])
        hi = np.array([b.upper for b in self.bounds])
        ex = np.array([b.exact_expected_bias for b in self.bounds])
        return lo, hi, ex


def atr_variance_parts(basis: ApportionmentBasis) -> tuple[np.ndarray, np.ndarray]:
    """Return ((M^T M)^{-1}, V2) with V2 = (M^T M)^{-1} M^T S M (M^T M)^{-1}."""
    g = basis.mean_gram_inverse()
    c = g @ (basis.group_means.T @ basis.residuals)
    return sym(g), sym(c @ c.T)


def variance_profiles(basis: ApportionmentBasis, gamma: float) -> VarianceProfile:
    gamma = _check_gamma(gamma)
    g, v2 = atr_variance_parts(basis)
    h = sym(basis.rts_gram())
    return VarianceProfile(v_atr=v2 + gamma * g, v_rts=gamma * h, gamma=gamma)


def crossover_matrices(basis: ApportionmentBasis) -> tuple[np.ndarray, np.ndarray]:
    """(V1, V2): isotropic variance gap and the ATR scatter term."""
    g, v2 = atr_variance_parts(basis)
    return sym(basis.rts_gram() - g), v2


def gamma_threshold(basis: ApportionmentBasis) -> float:
    """Largest gamma for which Var[RTS] <= Var[ATR] in the Loewner order.

    With V1 positive definite this is the smallest generalized eigenvalue of
    the pencil (V2, V1). When V1 is singular, the condition
    ``V2 - gamma V1 >= 0`` is reduced to the range of V1 through the Schur
    complement of V2 on the null space of V1; null directions of V1 never
    bound gamma. Returns ``inf`` when nothing bounds it.
    """
    if basis.K == basis.n:
        # no residual profiles: V2 = 0, threshold 0 by convention
        return 0.0
    v1, v2 = crossover_matrices(basis)
    return threshold_from_matrices(v1, v2, ref_scale=float(np.abs(basis.rts_gram()).max()))


def threshold_from_matrices(v1: np.ndarray, v2: np.ndarray, ref_scale: float = 0.0) -> float:
    scale = max(np.abs(v1).max(initial=0.0), np.abs(v2).max(initial=0.0), ref_scale)
    tol = THRESHOLD_RTOL * scale
    w, q = np.linalg.eigh(v1)
    rng = w > tol
    v2_zero = np.abs(v2).max(initial=0.0) <= tol
    if not rng.any():
        if v2_zero:
            warnings.warn("V1 and V2 are both zero; gamma threshold is unbounded",
                          RuntimeWarning, stacklevel=3)
        return np.inf
    if v2_zero:
        return 0.0
    qr, qn = q[:, rng], q[:, ~rng]
    b11 = qr.T @ v2 @ qr
    if qn.shape[1]:
        b12 = qr.T @ v2 @ qn
        b22 = qn.T @ v2 @ qn
        # pseudo-inverse at the absolute tolerance; V2 >= 0 makes b12 vanish where b22 does
        w22, q22 = np.linalg.eigh(sym(b22))
        keep = w22 > tol
        c = b12 @ q22[:, keep]
        b11 = b11 - (c / w22[keep]) @ c.T
    d = np.diag(w[rng])
    lam = sla.eigh(sym(b11), d, eigvals_only=True)
    return float(max(lam.min(), 0.0))


def standard_errors_rts(basis: ApportionmentBasis, y) -> np.ndarray:
    """Squared standard errors of the RTS estimate.

    ``(y^T (I - P_X) y) / (p - n) * A^T (X^T X)^{-1} A``. For a batch ``y`` of
    shape (p, R) the result has shape (R, K, K).
    """
    p, n = basis.p, basis.n
    if p <= n:
        raise ValidationError("standard errors need p > n")
    yv = profile_vector(y, p)
    resid = basis.dict_ls.residual(yv)
    scale = np.sum(resid**2, axis=0) / (p - n)
    h = sym(basis.rts_gram())
    if np.ndim(scale) == 0:
        return float(scale) * h
    return scale[:, None, None] * h[None]


def rts_variance_diag(basis: ApportionmentBasis, sigma) -> np.ndarray:
    """Diagonal of Var[theta_RTS] per unit ||theta||^2 under covariance Sigma."""
    b = basis.rts_weights()
    return np.diag(as_covariance(sigma).quad(b)).copy()


def subspace_bases(basis: ApportionmentBasis) -> SubspaceBases:
    """Three mutually orthogonal bases of R^p.

    u1 spans the residual profiles E, u2 spans X (X^T X)^{-1} A and u3 the
    orthogonal complement of the dictionary's column space. u3 is p x (p-n),
    so this is meant for moderate p.
    """
    u2, _, _ = np.linalg.svd(basis.rts_weights(), full_matrices=False)
    return SubspaceBases(u1=np.array(basis.residual_u), u2=u2,
                         u3=orthonormal_complement(basis.dict_ls.q))


def bias_envelope(basis: ApportionmentBasis, mean: np.ndarray, sigma,
                  theta=None) -> BiasEnvelope:
    """Bounds on the expected bias of the RTS squared standard errors.

    For a population with E[y] = M theta and Var[y] = ||theta||^2 Sigma, each
    category gets ``lower <= E[v_k - vhat_k] / ||theta||^2 <= upper`` and the
    exact value of that expectation. Without ``theta`` the exact value omits
    the mean-misfit term ``||(I - P_X) M theta||^2``; it is then exact when
    the columns of M lie in the span of X and an upper estimate otherwise.
    """
    sig = as_covariance(sigma)
    mean = np.asarray(mean, dtype=float)
    p, n = basis.p, basis.n
    if sig.dim != p or mean.shape != (p, basis.K):
        raise ValidationError("population mean/covariance do not match the dictionary")
    if p <= n:
        raise ValidationError("bias envelope needs p > n")
    q = basis.dict_ls.q
    h = np.diag(basis.rts_gram())
    v = rts_variance_diag(basis, sig)

    # average eigenvalues over the complement of col(X), via traces only
    lbar_sigma = (sig.trace() - np.trace(sig.quad(q))) / (p - n)
    m_out = mean - q @ (q.T @ mean)
    lbar_mean = float(np.sum(m_out**2)) / (p - n)

    u2, _, _ = np.linalg.svd(basis.rts_weights(), full_matrices=False)
    lam = np.linalg.eigvalsh(sym(sig.quad(u2)))
    upper = h * (lam.max() - lbar_sigma)
    lower = h * (lam.min() - lbar_sigma - lbar_mean)

    mis = 0.0
    if theta is not None:
        t = np.asarray(theta, dtype=float)
        if t.shape != (basis.K,):
            raise ValidationError(f"theta must have length {basis.K}")
        norm2 = float(t @ t)
        if norm2 == 0:
            raise ValidationError("theta must be nonzero")
        mis = float(np.sum((m_out @ t) ** 2)) / norm2 / (p - n)
    exact = v - h * (lbar_sigma + mis)
    bounds = tuple(BiasBound(float(lo), float(hi), float(ex))
                   for lo, hi, ex in zip(lower, upper, exact))
    return BiasEnvelope(basis.design.category_names, bounds, theta is not None)
