"""Monte Carlo study of the ATR/RTS estimates, predictors and standard errors.

The population is built from a full dictionary: mean ``M`` = group means and
covariance ``Sigma = nu/(n-K) * S + gamma * I`` with ``(nu, gamma)`` matched
to the Ledoit-Wolf shrinkage estimate computed from the residual profiles.
Estimators then only see an alpha-subsample of the dictionary.

Random streams use numpy's Philox (counter-based) bit generator seeded by a
``SeedSequence`` keyed on ``(master seed, stage, indices...)``, so every
theta draw, subsample and replicate has its own stream regardless of how
the work is scheduled across threads.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .covariance import LowRankPlusIsotropic
from .errors import NumericalError, ValidationError
from .estimators import atr_coefficients, gls_coefficients, rts_coefficients
from .linalg import LeastSquares
from .model import ApportionmentBasis, Dictionary, Profile, SourceDesign, decompose
from .predictors import partition, predict_atr, predict_oracle_blup, predict_rts
from .variability import standard_errors_rts

log = logging.getLogger(__name__)

RNG_NAME = f"numpy.random.Philox (numpy {np.__version__}) seeded by SeedSequence"

# stream stages
THETA_STREAM, SUBSAMPLE_STREAM, REPLICATE_STREAM, DICTIONARY_STREAM = 0, 1, 2, 3


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``key`` under a master seed."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def _as_rng(seed_or_rng) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return stream(int(seed_or_rng))


# --------------------------------------------------------------------------
# Population model


@dataclass(frozen=True)
class LedoitWolfFit:
    m: float
    d2: float
    b2_bar: float
    b2: float

    @property
    def nu(self) -> float:
        return (self.d2 - self.b2) / self.d2

    @property
    def gamma(self) -> float:
        return self.b2 / self.d2 * self.m


def ledoit_wolf_scalars(residuals: np.ndarray) -> LedoitWolfFit:
    """Shrinkage scalars for the r residual columns e_j (treated as mean zero).

    With S_n = E E^T / r: ``m = tr(S_n)/p``, ``d2 = ||S_n - m I||^2/p``,
    ``b2_bar = sum_j ||e_j e_j^T - S_n||^2 / (p r^2)``, ``b2 = min(b2_bar, d2)``.
    Everything is evaluated through the r x r Gram matrix.
    """
    e = np.asarray(residuals, dtype=float)
    p, r = e.shape
    if r == 0:
        raise ValidationError("no residual profiles (n = K)")
    g = e.T @ e
    tr_sn = np.trace(g) / r
    sn_fro2 = np.sum(g * g) / r**2
    m = tr_sn / p
    d2 = max((sn_fro2 - 2 * m * tr_sn + m * m * p) / p, 0.0)
    # ||e e^T - S_n||^2 = |e|^4 - 2 e^T S_n e + ||S_n||^2, with e_j^T S_n e_j = (G^2)_jj / r
    diag = np.diag(g)
    per = diag**2 - 2 * np.einsum("ij,ij->j", g, g) / r + sn_fro2
    b2_bar = float(np.sum(np.maximum(per, 0.0))) / (p * r**2)
    return LedoitWolfFit(m=float(m), d2=float(d2), b2_bar=b2_bar, b2=min(b2_bar, float(d2)))


@dataclass(frozen=True, eq=False)
class SyntheticModel:
    """E[y] = mean @ theta, Var[y] = |theta|^2 (nu/r E E^T + gamma I)."""

    mean: np.ndarray
    residuals: np.ndarray
    nu: float
    gamma: float
    theta: np.ndarray | None = None
    lw: LedoitWolfFit | None = None

    @property
    def p(self) -> int:
        return self.mean.shape[0]

    @property
    def r(self) -> int:
        return self.residuals.shape[1]

    @property
    def cov_lowrank(self) -> np.ndarray:
        """p x r factor F with Sigma = F F^T + gamma I."""
        return self.residuals * math.sqrt(self.nu / self.r)

    @property
    def degenerate(self) -> bool:
        return self.nu == 0 and self.gamma == 0

    def covariance(self) -> LowRankPlusIsotropic:
        return LowRankPlusIsotropic(self.cov_lowrank, self.gamma)


def fit_population(basis: ApportionmentBasis, nu_floor: float | None = None) -> SyntheticModel:
    """Population model calibrated to the Ledoit-Wolf estimate of the residual scatter.

    ``nu_floor`` forces nu to at least that value when the residual
    scatter is isotropic (d2 = 0); otherwise that case is an error.
    """
    r = basis.n - basis.K
    if r < 2:
        raise ValidationError(f"need at least 2 residual profiles (n - K = {r})")
    lw = ledoit_wolf_scalars(basis.residuals)
    if lw.d2 <= 0:
        if nu_floor is None:
            raise NumericalError(
                "residual scatter is isotropic (d2 = 0) so nu* = 0; "
                "set nu_floor to force a small positive value")
        nu, gamma = float(nu_floor), lw.m
    else:
        nu, gamma = lw.nu, lw.gamma
        if nu_floor is not None:
            nu = max(nu, float(nu_floor))
    if gamma <= 0:
        raise NumericalError("fitted isotropic variance is zero; covariance would be singular")
    return SyntheticModel(np.array(basis.group_means), np.array(basis.residuals),
                          float(nu), float(gamma), lw=lw)


def sample_theta(K: int, seed) -> np.ndarray:
    """Draw from Dirichlet(1_K / K), renormalized onto the simplex."""
    if K < 1:
        raise ValidationError("K must be >= 1")
    if K == 1:
        return np.ones(1)
    t = _as_rng(seed).dirichlet(np.full(K, 1.0 / K))
    return t / t.sum()


def sample_profile(model: SyntheticModel, theta, seed) -> np.ndarray:
    """y = M theta + |theta| (F z1 + sqrt(gamma) z2), z1 and z2 standard normal."""
    rng = _as_rng(seed)
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (model.mean.shape[1],):
        raise ValidationError("theta does not match the model")
    z1 = rng.standard_normal(model.r)
    z2 = rng.standard_normal(model.p)
    noise = model.cov_lowrank @ z1 + math.sqrt(model.gamma) * z2
    return model.mean @ theta + np.linalg.norm(theta) * noise


def sample_profiles(model: SyntheticModel, theta, seed: int, theta_id: int,
                    replicates: int) -> np.ndarray:
    """p x R batch; column j uses the stream of replicate j for this theta."""
    theta = np.asarray(theta, dtype=float)
    z1 = np.empty((model.r, replicates))
    z2 = np.empty((model.p, replicates))
    for j in range(replicates):
        rng = stream(seed, REPLICATE_STREAM, theta_id, j)
        z1[:, j] = rng.standard_normal(model.r)
        z2[:, j] = rng.standard_normal(model.p)
    noise = model.cov_lowrank @ z1 + math.sqrt(model.gamma) * z2
    return (model.mean @ theta)[:, None] + np.linalg.norm(theta) * noise


def subsample_dictionary(dictionary: Dictionary, design: SourceDesign, alpha: float,
                         seed) -> tuple[Dictionary, SourceDesign]:
    """Keep ceil(alpha * n_k) profiles per category, uniformly without replacement.

    Requires an indicator design. Kept profiles stay in their original order.
    """
    if not 0 < alpha <= 1:
        raise ValidationError(f"alpha must be in (0, 1], got {alpha}")
    if not design.is_indicator():
        raise ValidationError("subsampling needs one source category per profile")
    rng = _as_rng(seed)
    cat = np.argmax(design.weights, axis=1)
    keep = []
    for k, name in enumerate(design.category_names):
        idx = np.flatnonzero(cat == k)
        size = math.ceil(alpha * idx.size - 1e-9)
        if size < 2:
            raise ValidationError(
                f"category {name!r} would keep {size} profile(s) at alpha={alpha}; need 2")
        keep.append(idx if size == idx.size else rng.choice(idx, size=size, replace=False))
    keep = np.sort(np.concatenate(keep))
    return dictionary.select_profiles(keep), design.select_rows(keep)


# --------------------------------------------------------------------------
# Experiments

MODES = ("estimation", "prediction", "stderr")


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str
    dictionary: Dictionary
    design: SourceDesign
    alphas: tuple[float, ...] = (0.5, 1.0)
    theta_count: int = 50
    replicates: int = 200
    seed: int = 0
    observed_mask: np.ndarray | None = None
    nu_floor: float | None = None
    workers: int = 1
    model: SyntheticModel | None = None   # override the fitted population

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.theta_count < 1 or self.replicates < 1:
            raise ValidationError("theta_count and replicates must be >= 1")
        if self.mode == "stderr" and self.replicates < 2:
            raise ValidationError("stderr mode needs at least 2 replicates")
        if self.mode == "prediction":
            if self.observed_mask is None:
                raise ValidationError("prediction mode needs a feature mask")
            mask = np.asarray(self.observed_mask, bool)
            if mask.shape != (self.dictionary.p,) or mask.all():
                raise ValidationError("feature mask must mark some of the p features unobserved")
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")


@dataclass(frozen=True)
class ReportRow:
    alpha: float
    theta_id: int
    method: str
    category: str
    metric_name: str
    value: float
    mc_se: float
    replicates: int
    seed: int

    def key(self):
        return (self.alpha, self.theta_id, self.method, self.category, self.metric_name)


CSV_COLUMNS = ("alpha", "theta_id", "method", "category", "metric_name", "value", "mc_se",
               "replicates", "seed")


@dataclass(frozen=True, eq=False)
class ExperimentReport:
    mode: str
    rows: tuple[ReportRow, ...]
    thetas: np.ndarray
    categories: tuple[str, ...]
    model: SyntheticModel
    config: ExperimentConfig = field(repr=False)

    def select(self, metric=None, method=None, alpha=None, category=None) -> list[ReportRow]:
        out = []
        for r in self.rows:
            if metric is not None and r.metric_name != metric:
                continue
            if method is not None and r.method != method:
                continue
            if alpha is not None and r.alpha != alpha:
                continue
            if category is not None and r.category != category:
                continue
            out.append(r)
        return out

    def table(self, metric: str, method: str, alpha: float) -> np.ndarray:
        """Values ordered by (theta_id, category)."""
        return np.array([r.value for r in self.select(metric, method, alpha)])

    def mc_se(self, metric: str, method: str, alpha: float) -> np.ndarray:
        return np.array([r.mc_se for r in self.select(metric, method, alpha)])


def _rmse(err2: np.ndarray) -> tuple[float, float]:
    """RMSE from per-replicate squared errors, with a delta-method MC error."""
    r = err2.size
    mse = float(err2.mean())
    rmse = math.sqrt(mse)
    se_mse = float(err2.std(ddof=1)) / math.sqrt(r) if r > 1 else math.nan
    return rmse, (se_mse / (2 * rmse) if rmse > 0 else 0.0)


@dataclass(frozen=True, eq=False)
class _AlphaContext:
    index: int
    alpha: float
    basis: ApportionmentBasis


def _cell(cfg: ExperimentConfig, model: SyntheticModel, ctx: _AlphaContext,
          theta_id: int, theta: np.ndarray, shared) -> list[ReportRow]:
    y = sample_profiles(model, theta, cfg.seed, theta_id, cfg.replicates)
    basis = ctx.basis
    R = cfg.replicates

    def row(method, metric, value, se, category=""):
        return ReportRow(ctx.alpha, theta_id, method, category, metric,
                         float(value), float(se), R, cfg.seed)

    rows = []
    if cfg.mode == "estimation":
        ests = {
            "ATR": atr_coefficients(basis, y),
            "RTS": rts_coefficients(basis, y),
            "ORACLE_OLS": shared["ols"].coef(y),
            "ORACLE_GLS": shared["gls"](y),
        }
        for name, est in ests.items():
            rmse, se = _rmse(np.sum((est - theta[:, None]) ** 2, axis=0))
            rows.append(row(name, "rmse_theta", rmse, se))
    elif cfg.mode == "prediction":
        mask = shared["mask"]
        prob = partition(basis, mask, y[mask])
        truth = y[~mask]
        preds = {
            "ATR": predict_atr(prob),
            "RTS": predict_rts(prob),
            "ORACLE_BLUP": shared["blup"](y[mask]),
        }
        for name, pred in preds.items():
            rmse, se = _rmse(np.sum((truth - pred) ** 2, axis=0))
            rows.append(row(name, "rmse_prediction", rmse, se))
    else:
        est = rts_coefficients(basis, y)
        sse = standard_errors_rts(basis, y)
        se_draws = np.sqrt(np.einsum("rkk->rk", sse))
        sd = est.std(axis=1, ddof=1)
        for k, name in enumerate(basis.design.category_names):
            rows.append(row("RTS", "sd_rts", sd[k], sd[k] / math.sqrt(2 * (R - 1)), name))
            rows.append(row("RTS", "mean_se_rts", se_draws[:, k].mean(),
                            se_draws[:, k].std(ddof=1) / math.sqrt(R), name))
    for r in rows:
        if not (math.isfinite(r.value) and r.value >= 0):
            raise NumericalError(f"non-finite metric in cell alpha={ctx.alpha}, theta {theta_id}")
    return rows


def _shared_state(cfg: ExperimentConfig, model: SyntheticModel) -> dict:
    shared = {}
    if cfg.mode == "estimation":
        shared["ols"] = LeastSquares.factor(model.mean, "population mean")
        if model.degenerate:
            # zero covariance: every unbiased linear estimate is exact; GLS = OLS limit
            shared["gls"] = shared["ols"].coef
        else:
            sigma = model.covariance()
            shared["gls"] = lambda y: gls_coefficients(model.mean, sigma, y)
    elif cfg.mode == "prediction":
        mask = np.asarray(cfg.observed_mask, bool)
        shared["mask"] = mask
        if model.degenerate:
            ls0 = LeastSquares.factor(model.mean[mask], "population mean (observed rows)")
            shared["blup"] = lambda y0: model.mean[~mask] @ ls0.coef(y0)
        else:
            sigma = model.covariance()
            shared["blup"] = lambda y0: predict_oracle_blup(model.mean, sigma, mask, y0)
    return shared


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Run every (alpha, theta) cell and collect the report rows.

    Thetas are drawn once and shared across alphas; replicate streams are
    keyed by (theta_id, replicate), so alphas and methods see common random
    numbers. Any failing cell aborts the run.
    """
    full = decompose(cfg.dictionary, cfg.design)
    model = cfg.model or fit_population(full, cfg.nu_floor)
    K = cfg.design.K
    thetas = np.array([sample_theta(K, stream(cfg.seed, THETA_STREAM, j))
                       for j in range(cfg.theta_count)])
    contexts = []
    for i, alpha in enumerate(cfg.alphas):
        d, a = subsample_dictionary(cfg.dictionary, cfg.design, alpha,
                                    stream(cfg.seed, SUBSAMPLE_STREAM, i))
        contexts.append(_AlphaContext(i, float(alpha), decompose(d, a)))
    shared = _shared_state(cfg, model)
    log.info("running %s: %d alphas x %d thetas x %d replicates on %d worker(s)",
             cfg.mode, len(contexts), cfg.theta_count, cfg.replicates, cfg.workers)

    jobs = [(ctx, j) for ctx in contexts for j in range(cfg.theta_count)]

    def work(job):
        ctx, j = job
        try:
            return _cell(cfg, model, ctx, j, thetas[j], shared)
        except (NumericalError, ValidationError) as exc:
            raise type(exc)(f"cell alpha={ctx.alpha} theta_id={j}: {exc}") from exc

    if cfg.workers == 1:
        results = [work(job) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(work, jobs))
    rows = sorted((r for res in results for r in res), key=ReportRow.key)
    return ExperimentReport(cfg.mode, tuple(rows), thetas, cfg.design.category_names,
                            model, cfg)


def noise_free(model: SyntheticModel) -> SyntheticModel:
    """Same population with zero covariance (test rigs only)."""
    return replace(model, nu=0.0, gamma=0.0)
