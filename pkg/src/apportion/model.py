"""Dictionary, design and the derived apportionment basis.

A dictionary ``X`` (p x n) holds reference profiles as columns; a source
design ``A`` (n x K) records the known source proportions of each profile.
:func:`decompose` derives the group means ``M = X A (A^T A)^{-1}``, an
orthonormal basis ``N`` of the null space of ``A^T``, the residual profiles
``E = X N`` and the factorizations every estimator reuses.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg as sla

from .covariance import LowRankPlusIsotropic
from .errors import NumericalError, ValidationError
from .linalg import LeastSquares, numerical_rank, sign_normalize

ROW_SUM_TOL = 1e-12


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _check_unique(ids: Sequence[str], what: str) -> tuple[str, ...]:
    ids = tuple(str(i) for i in ids)
    seen = set()
    for i in ids:
        if i in seen:
            raise ValidationError(f"duplicate {what}: {i!r}")
        seen.add(i)
    return ids


@dataclass(frozen=True, eq=False)
class Dictionary:
    """p x n matrix of reference profiles with feature and profile labels."""

    values: np.ndarray
    feature_ids: tuple[str, ...]
    profile_ids: tuple[str, ...]

    def __post_init__(self):
        x = _frozen(self.values)
        if x.ndim != 2:
            raise ValidationError("dictionary values must be a 2-d matrix")
        p, n = x.shape
        if not np.all(np.isfinite(x)):
            raise ValidationError("dictionary contains non-finite values")
        if n >= p:
            raise ValidationError(f"need fewer profiles than features (n={n}, p={p})")
        object.__setattr__(self, "values", x)
        object.__setattr__(self, "feature_ids", _check_unique(self.feature_ids, "feature id"))
        object.__setattr__(self, "profile_ids", _check_unique(self.profile_ids, "profile id"))
        if len(self.feature_ids) != p or len(self.profile_ids) != n:
            raise ValidationError("label lengths do not match the dictionary shape")

    @classmethod
    def from_array(cls, values, feature_ids=None, profile_ids=None) -> "Dictionary":
        values = np.asarray(values, dtype=float)
        p, n = values.shape
        if feature_ids is None:
            feature_ids = [f"f{i}" for i in range(p)]
        if profile_ids is None:
            profile_ids = [f"x{j}" for j in range(n)]
        return cls(values, tuple(feature_ids), tuple(profile_ids))

    @property
    def p(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def select_profiles(self, idx) -> "Dictionary":
        idx = np.asarray(idx, dtype=int)
        return Dictionary(self.values[:, idx], self.feature_ids,
                          tuple(self.profile_ids[i] for i in idx))


@dataclass(frozen=True, eq=False)
class SourceDesign:
    """n x K matrix of known source proportions, one row per dictionary profile."""

    weights: np.ndarray
    category_names: tuple[str, ...]

    def __post_init__(self):
        a = _frozen(self.weights)
        if a.ndim != 2:
            raise ValidationError("design weights must be a 2-d matrix")
        n, k = a.shape
        names = _check_unique(self.category_names, "category name")
        if len(names) != k:
            raise ValidationError("category names do not match the number of design columns")
        if k == 0 or k > n:
            raise ValidationError(f"need 1 <= K <= n (K={k}, n={n})")
        if not np.all(np.isfinite(a)) or np.any(a < 0):
            bad = int(np.flatnonzero(~np.all(np.isfinite(a) & (a >= 0), axis=1))[0])
            raise ValidationError(f"design row {bad} has negative or non-finite weights")
        off = np.abs(a.sum(axis=1) - 1.0)
        if np.any(off > ROW_SUM_TOL):
            bad = int(np.argmax(off))
            raise ValidationError(f"design row {bad} sums to {a[bad].sum()!r}, not 1")
        totals = a.sum(axis=0)
        if np.any(totals <= 0):
            raise ValidationError(
                f"category {names[int(np.argmin(totals))]!r} receives no weight")
        if numerical_rank(a) < k:
            raise ValidationError("design is rank deficient")
        object.__setattr__(self, "weights", a)
        object.__setattr__(self, "category_names", names)

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @property
    def K(self) -> int:
        return self.weights.shape[1]

    def is_indicator(self) -> bool:
        a = self.weights
        return bool(np.all((a == 0) | (a == 1)))

    def labels(self) -> list[str]:
        """Category of each row (indicator designs only)."""
        if not self.is_indicator():
            raise ValidationError("design has mixed rows; no single label per profile")
        return [self.category_names[k] for k in np.argmax(self.weights, axis=1)]

    def select_rows(self, idx) -> "SourceDesign":
        return SourceDesign(self.weights[np.asarray(idx, dtype=int)], self.category_names)


@dataclass(frozen=True, eq=False)
class Profile:
    """A length-p profile with an explicit observed mask."""

    values: np.ndarray
    feature_ids: tuple[str, ...]
    observed: np.ndarray = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 1:
            raise ValidationError("profile values must be 1-d")
        obs = np.ones(v.shape, bool) if self.observed is None else np.array(self.observed, bool)
        if obs.shape != v.shape:
            raise ValidationError("observed mask does not match profile length")
        if not np.all(np.isfinite(v[obs])):
            raise ValidationError("observed profile entries must be finite")
        v[~obs] = np.nan
        v.setflags(write=False)
        obs.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "observed", obs)
        object.__setattr__(self, "feature_ids", _check_unique(self.feature_ids, "feature id"))
        if len(self.feature_ids) != v.size:
            raise ValidationError("feature ids do not match profile length")

    @classmethod
    def full(cls, values, feature_ids) -> "Profile":
        return cls(values, tuple(feature_ids))

    @property
    def fully_observed(self) -> bool:
        return bool(self.observed.all())


def build_design(labels_or_weights, category_names: Sequence[str]) -> SourceDesign:
    """Make a design from per-profile labels (indicator rows) or weight rows.

    >>> build_design(["s1", "s1", "s2"], ["s1", "s2"]).weights.tolist()
    [[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]
    """
    names = tuple(str(c) for c in category_names)
    items = list(labels_or_weights)
    if items and all(isinstance(x, str) for x in items):
        index = {c: k for k, c in enumerate(names)}
        a = np.zeros((len(items), len(names)))
        for i, lab in enumerate(items):
            if lab not in index:
                raise ValidationError(f"profile {i} has unknown category label {lab!r}")
            a[i, index[lab]] = 1.0
    else:
        a = np.asarray(items, dtype=float)
        if a.ndim != 2 or a.shape[1] != len(names):
            raise ValidationError("weight rows must have one entry per category")
    return SourceDesign(a, names)


@dataclass(frozen=True, eq=False)
class ApportionmentBasis:
    """Quantities derived once from (X, A) and shared by all estimators.

    ``dict_ls`` is the thin QR of X, used to apply ``(X^T X)^{-1}``;
    ``mean_ls`` is the thin QR of the group means.
    """

    dictionary: Dictionary
    design: SourceDesign
    group_means: np.ndarray
    null_basis: np.ndarray
    residuals: np.ndarray
    residual_u: np.ndarray
    residual_s: np.ndarray
    dict_ls: LeastSquares = field(repr=False)
    mean_ls: LeastSquares = field(repr=False)

    @property
    def X(self) -> np.ndarray:
        return self.dictionary.values

    @property
    def A(self) -> np.ndarray:
        return self.design.weights

    @property
    def p(self) -> int:
        return self.dictionary.p

    @property
    def n(self) -> int:
        return self.dictionary.n

    @property
    def K(self) -> int:
        return self.design.K

    def residual_scatter(self, gamma: float) -> LowRankPlusIsotropic:
        """The feasible covariance S + gamma * I with S = E E^T."""
        return LowRankPlusIsotropic.from_svd(self.residual_u, self.residual_s, gamma)

    def scatter_dense(self) -> np.ndarray:
        """S = E E^T as a dense p x p matrix (small problems and tests only)."""
        e = self.residuals
        return e @ e.T

    def rts_weights(self) -> np.ndarray:
        """B = X (X^T X)^{-1} A, so that theta_RTS = B^T y."""
        return self.X @ self.dict_ls.gram_solve(self.A)

    def rts_gram(self) -> np.ndarray:
        """A^T (X^T X)^{-1} A."""
        w = self.dict_ls.gram_inverse_sqrt_of(self.A)
        return w.T @ w

    def mean_gram_inverse(self) -> np.ndarray:
        """(M^T M)^{-1} for the group means M."""
        return self.mean_ls.gram_solve(np.eye(self.K))


def null_space_basis(a: np.ndarray) -> np.ndarray:
    """Orthonormal basis of null(A^T), from a full QR of A, sign-normalized."""
    n, k = a.shape
    q, _ = sla.qr(a, mode="full")
    return sign_normalize(q[:, k:])


def decompose(dictionary: Dictionary, design: SourceDesign) -> ApportionmentBasis:
    """Derive group means, null basis, residual profiles and factorizations.

    Raises :class:`NumericalError` when X is rank deficient at the rank
    tolerance and :class:`ValidationError` on shape mismatch.
    """
    x, a = dictionary.values, design.weights
    if a.shape[0] != x.shape[1]:
        raise ValidationError(
            f"design has {a.shape[0]} rows but the dictionary has {x.shape[1]} profiles")
    dict_ls = LeastSquares.factor(x, "dictionary")
    design_ls = LeastSquares.factor(a, "design")
    # M^T = (A^T A)^{-1} A^T X^T, i.e. least squares of X^T on A
    means = design_ls.coef(x.T).T
    mean_ls = LeastSquares.factor(means, "group-mean matrix")
    nb = null_space_basis(a)
    e = x @ nb
    if e.shape[1]:
        u, s, _ = np.linalg.svd(e, full_matrices=False)
    else:
        u, s = np.zeros((x.shape[0], 0)), np.zeros(0)
    if s.size and s.min() <= 0:
        raise NumericalError("residual profiles are rank deficient")
    return ApportionmentBasis(
        dictionary=dictionary,
        design=design,
        group_means=_frozen(means),
        null_basis=_frozen(nb),
        residuals=_frozen(e),
        residual_u=_frozen(u),
        residual_s=_frozen(s),
        dict_ls=dict_ls,
        mean_ls=mean_ls,
    )


def profile_vector(y, p: int | None = None) -> np.ndarray:
    """Fully observed values of a Profile or array-like, as float array.

    Arrays may be (p,) or (p, R) to process R profiles at once.
    """
    if isinstance(y, Profile):
        if not y.fully_observed:
            raise ValidationError(
                f"profile has {int((~y.observed).sum())} unobserved entries; "
                "use the predictors for partial profiles")
        v = np.asarray(y.values)
    else:
        v = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(v)):
            raise ValidationError("profile contains non-finite values")
    if p is not None and v.shape[0] != p:
        raise ValidationError(f"profile has length {v.shape[0]}, expected {p}")
    return v
