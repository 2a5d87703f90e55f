"""Prediction of unobserved profile entries from the observed ones.

Rows of the dictionary are split into observed and unobserved features. The
design ``A`` indexes profiles, not features, so the null basis ``N`` of the
full problem is reused for the observed-row slices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .covariance import LowRankPlusIsotropic, as_covariance
from .errors import NumericalError, ValidationError
from .estimators import _check_gamma, gls_coefficients
from .linalg import LeastSquares
from .model import ApportionmentBasis, Profile


@dataclass(frozen=True, eq=False)
class PartitionedProblem:
    observed_rows: np.ndarray
    unobserved_rows: np.ndarray
    X0: np.ndarray
    Xp: np.ndarray
    M0: np.ndarray
    Mp: np.ndarray
    E0: np.ndarray
    Ep: np.ndarray
    y0: np.ndarray
    dict0_ls: LeastSquares

    @property
    def q(self) -> int:
        return self.unobserved_rows.size

    def complete(self, prediction: np.ndarray) -> np.ndarray:
        """Full-length profile with predictions filled into the unobserved rows."""
        p = self.observed_rows.size + self.q
        out = np.empty(p) if prediction.ndim == 1 else np.empty((p,) + prediction.shape[1:])
        out[self.observed_rows] = self.y0
        out[self.unobserved_rows] = prediction
        return out


def _split(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mask = np.asarray(mask, bool)
    return np.flatnonzero(mask), np.flatnonzero(~mask)


def partition(basis: ApportionmentBasis, observed, y0=None) -> PartitionedProblem:
    """Build the partitioned problem.

    ``observed`` is a boolean mask over features, or a :class:`Profile` whose
    observed flags define it (its values then supply ``y0``). ``y0`` may be
    given explicitly as a length p-q vector or (p-q, R) batch.
    """
    if isinstance(observed, Profile):
        if tuple(observed.feature_ids) != basis.dictionary.feature_ids:
            raise ValidationError("profile features are not aligned with the dictionary")
        mask = observed.observed
        if y0 is None:
            y0 = observed.values[mask]
    else:
        mask = np.asarray(observed, bool)
    if mask.shape != (basis.p,):
        raise ValidationError(f"observed mask must have length {basis.p}")
    obs, unobs = _split(mask)
    if unobs.size == 0:
        raise ValidationError("nothing to predict: every feature is observed")
    if y0 is None:
        raise ValidationError("observed values y0 are required")
    y0 = np.asarray(y0, dtype=float)
    if y0.shape[0] != obs.size or not np.all(np.isfinite(y0)):
        raise ValidationError(f"y0 must hold {obs.size} finite observed values")
    x = basis.X
    try:
        ls0 = LeastSquares.factor(x[obs], "observed-row dictionary X0")
    except NumericalError as exc:
        raise NumericalError(f"{exc}; the observed features do not cover the dictionary") from exc
    m, e = basis.group_means, basis.residuals
    return PartitionedProblem(obs, unobs, x[obs], x[unobs], m[obs], m[unobs],
                              e[obs], e[unobs], y0, ls0)


def predict_rts(prob: PartitionedProblem) -> np.ndarray:
    """X' (X0^T X0)^{-1} X0^T y0."""
    return prob.Xp @ prob.dict0_ls.coef(prob.y0)


def predict_atr(prob: PartitionedProblem) -> np.ndarray:
    """M' times the ATR coefficients fitted on the observed rows."""
    ls = LeastSquares.factor(prob.M0, "observed-row group means M0")
    return prob.Mp @ ls.coef(prob.y0)


def predict_fgls(prob: PartitionedProblem, gamma: float) -> np.ndarray:
    """Feasible BLUP with observed-block covariance E0 E0^T + gamma I.

    The cross block is E0 E'^T, the off-diagonal part of S.
    """
    gamma = _check_gamma(gamma)
    sigma0 = LowRankPlusIsotropic(prob.E0, gamma)
    theta = gls_coefficients(prob.M0, sigma0, prob.y0)
    r = prob.y0 - prob.M0 @ theta
    # E0^T (E0 E0^T + g I)^{-1} r = V diag(d / (d^2 + g)) U^T r, no 1/g blow-up
    if prob.E0.shape[1] == 0:
        return prob.Mp @ theta
    u, d, vt = np.linalg.svd(prob.E0, full_matrices=False)
    ur = u.T @ r
    scale = d / (d**2 + gamma)
    coef = vt.T @ (scale[:, None] * ur if ur.ndim == 2 else scale * ur)
    return prob.Mp @ theta + prob.Ep @ coef


def predict_oracle_blup(m: np.ndarray, sigma, observed, y0) -> np.ndarray:
    """BLUP of the unobserved entries with known mean matrix and covariance.

    ``M' theta + Delta^T Sigma0^{-1} (y0 - M0 theta)`` with theta the GLS
    estimate from the observed rows.
    """
    m = np.asarray(m, dtype=float)
    sig = as_covariance(sigma)
    obs, unobs = _split(observed)
    if unobs.size == 0:
        raise ValidationError("nothing to predict: every feature is observed")
    y0 = np.asarray(y0, dtype=float)
    s0 = sig.restrict(obs)
    theta = gls_coefficients(m[obs], s0, y0)
    r = y0 - m[obs] @ theta
    return m[unobs] @ theta + sig.cross(unobs, obs, s0.solve(r))


def excitation_mask(feature_ids, excitations) -> np.ndarray:
    """True for features whose excitation wavelength is NOT in ``excitations``.

    Feature ids are ``"<excitation>:<emission>"`` strings.
    """
    from .io import parse_eem_feature

    targets = {float(e) for e in excitations}
    keep = []
    for fid in feature_ids:
        ex, _ = parse_eem_feature(fid)
        keep.append(ex not in targets)
    keep = np.array(keep, bool)
    if keep.all():
        raise ValidationError("no feature matches the requested excitation wavelengths")
    return keep
