"""ATR, RTS, feasible GLS and oracle estimates of the source proportions.

The ``*_coefficients`` functions accept a single profile (shape ``(p,)``) or
a batch (``(p, R)``) and return ``(K,)`` or ``(K, R)``; the ``estimate_*``
wrappers return an :class:`Estimate` for one profile.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .covariance import Covariance, as_covariance
from .errors import NumericalError, ValidationError
from .linalg import LeastSquares
from .model import ApportionmentBasis, profile_vector


class Method(str, Enum):
    ATR = "ATR"
    RTS = "RTS"
    FGLS = "FGLS"
    ORACLE_OLS = "ORACLE_OLS"
    ORACLE_GLS = "ORACLE_GLS"


@dataclass(frozen=True, eq=False)
class Estimate:
    theta: np.ndarray
    method: Method
    gamma: float | None = None
    sse: np.ndarray | None = None

    def __post_init__(self):
        if not np.all(np.isfinite(self.theta)):
            raise NumericalError(f"{self.method.value} estimate is not finite")
        if (self.gamma is not None) != (self.method is Method.FGLS):
            raise ValueError("gamma must be given exactly for FGLS estimates")

    @property
    def label(self) -> str:
        if self.method is Method.FGLS:
            return f"FGLS({self.gamma:g})"
        return self.method.value


def _check_gamma(gamma: float) -> float:
    gamma = float(gamma)
    if not np.isfinite(gamma) or gamma <= 0:
        raise ValidationError(
            f"gamma must be a positive finite number, got {gamma}; "
            "use the RTS (gamma -> 0) or ATR (gamma -> inf) estimates for the limits")
    return gamma


def atr_coefficients(basis: ApportionmentBasis, y) -> np.ndarray:
    """Regress y on the group means: (M^T M)^{-1} M^T y."""
    return basis.mean_ls.coef(profile_vector(y, basis.p))


def rts_coefficients(basis: ApportionmentBasis, y) -> np.ndarray:
    """Regress y on every dictionary profile, then sum by category: A^T beta."""
    beta = basis.dict_ls.coef(profile_vector(y, basis.p))
    return basis.A.T @ beta


def fgls_coefficients(basis: ApportionmentBasis, y, gamma: float) -> np.ndarray:
    """GLS on the group means with covariance S + gamma * I."""
    gamma = _check_gamma(gamma)
    return gls_coefficients(basis.group_means, basis.residual_scatter(gamma),
                            profile_vector(y, basis.p))


def gls_coefficients(m: np.ndarray, sigma: Covariance, y: np.ndarray) -> np.ndarray:
    # whitening turns GLS into OLS, solved by QR of the whitened design
    ls = LeastSquares.factor(sigma.whiten(m), "whitened mean matrix")
    return ls.coef(sigma.whiten(y))


def estimate_atr(basis: ApportionmentBasis, y) -> Estimate:
    return Estimate(atr_coefficients(basis, y), Method.ATR)


def estimate_rts(basis: ApportionmentBasis, y, with_se: bool = False) -> Estimate:
    theta = rts_coefficients(basis, y)
    sse = None
    if with_se:
        from .variability import standard_errors_rts

        sse = standard_errors_rts(basis, y)
    return Estimate(theta, Method.RTS, sse=sse)


def estimate_fgls(basis: ApportionmentBasis, y, gamma: float) -> Estimate:
    """Feasible GLS estimate for a fixed regularization gamma > 0.

    The result does not depend on the overall scale of S + gamma * I.
    """
    return Estimate(fgls_coefficients(basis, y, gamma), Method.FGLS, gamma=float(gamma))


def estimate_oracle(m: np.ndarray, sigma, y, mode: str = "GLS") -> Estimate:
    """OLS or GLS estimate with a known mean matrix and covariance."""
    m = np.asarray(m, dtype=float)
    yv = profile_vector(y, m.shape[0])
    mode = mode.upper()
    if mode == "OLS":
        return Estimate(LeastSquares.factor(m, "mean matrix").coef(yv), Method.ORACLE_OLS)
    if mode == "GLS":
        sig = as_covariance(sigma)
        if sig.dim != m.shape[0]:
            raise ValidationError("covariance and mean matrix dimensions differ")
        return Estimate(gls_coefficients(m, sig, yv), Method.ORACLE_GLS)
    raise ValidationError(f"unknown oracle mode {mode!r}")


def rts_crosschecks(basis: ApportionmentBasis, y) -> tuple[np.ndarray, np.ndarray]:
    """Two alternative routes to the RTS estimate.

    Returns ``(theta_expanded, theta_projection)``: the first K coefficients
    of the fit of y on ``[M E]``, and GLS-like estimate with ``I - P_E``
    in place of an inverse covariance. Both equal ``rts_coefficients``.
    """
    yv = profile_vector(y, basis.p)
    m, e = basis.group_means, basis.residuals
    z = np.hstack([m, e])
    theta_expanded = LeastSquares.factor(z, "expanded design [M E]").coef(yv)[: basis.K]
    u = basis.residual_u

    def deflate(v):
        return v - u @ (u.T @ v)

    theta_projection = LeastSquares.factor(deflate(m), "projected means").coef(deflate(yv))
    return theta_expanded, theta_projection
