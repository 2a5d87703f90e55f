"""Synthetic fluorescence-like dictionaries for desk-scale studies.

Profiles live on an excitation x emission grid. Every profile is a sum of
fluorophore peaks shared across categories; each category has its own peak
amplitudes, and profiles within a category vary by random amplitude
fluctuations, small peak shifts, an overall concentration factor and white
measurement noise. This gives smooth, strongly correlated profiles with a
decaying within-category spectrum, like real EEM data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .io import format_eem_feature
from .model import Dictionary, SourceDesign, build_design


@dataclass(frozen=True)
class SyntheticSpec:
    n_excitation: int
    n_emission: int
    K: int
    n_per_category: int
    n_components: int = 8
    amplitude_sd: float = 0.35      # log-scale sd of per-profile peak amplitudes
    shift_sd_nm: float = 4.0        # sd of per-profile peak position shifts
    concentration_sd: float = 0.2   # log-scale sd of the overall intensity
    noise_sd: float = 0.05          # white noise, relative to the peak height


def grid_shape(p: int, n_excitation: int | None = None) -> tuple[int, int]:
    """Split p features into an excitation x emission grid.

    Without an explicit excitation count, use the divisor of p closest to
    sqrt(p) (ties go to the larger divisor).
    """
    if n_excitation is None:
        divisors = [d for d in range(1, p + 1) if p % d == 0]
        n_excitation = min(divisors, key=lambda d: (abs(d - np.sqrt(p)), -d))
    if p % n_excitation:
        raise ValidationError(f"p={p} is not divisible by n_excitation={n_excitation}")
    return n_excitation, p // n_excitation


def wavelengths(n_excitation: int, n_emission: int) -> tuple[np.ndarray, np.ndarray]:
    ex = np.linspace(240.0, 450.0, n_excitation).round(1)
    em = np.linspace(300.0, 600.0, n_emission).round(1)
    return ex, em


def synthetic_dictionary(spec: SyntheticSpec, rng: np.random.Generator
                         ) -> tuple[Dictionary, SourceDesign]:
    ex, em = wavelengths(spec.n_excitation, spec.n_emission)
    c = spec.n_components
    # peak centres: emission red-shifted from excitation, as for real fluorophores
    cx = rng.uniform(ex.min() + 10, ex.max() - 10, size=c)
    cm = np.clip(cx + rng.uniform(60, 180, size=c), em.min() + 10, em.max() - 10)
    wx = rng.uniform(15, 35, size=c)
    wm = rng.uniform(25, 60, size=c)
    # category loadings: each category dominated by a few fluorophores
    loadings = rng.gamma(0.6, 1.0, size=(spec.K, c)) + 0.05
    loadings /= loadings.sum(axis=1, keepdims=True)

    gx, gm = np.meshgrid(ex, em, indexing="ij")
    gx, gm = gx.ravel(), gm.ravel()
    profiles, labels = [], []
    names = [f"s{k + 1}" for k in range(spec.K)]
    for k in range(spec.K):
        for _ in range(spec.n_per_category):
            amp = loadings[k] * np.exp(spec.amplitude_sd * rng.standard_normal(c))
            sx = cx + spec.shift_sd_nm * rng.standard_normal(c)
            sm = cm + spec.shift_sd_nm * rng.standard_normal(c)
            peaks = np.exp(-0.5 * (((gx[:, None] - sx) / wx) ** 2 + ((gm[:, None] - sm) / wm) ** 2))
            v = peaks @ amp
            v *= np.exp(spec.concentration_sd * rng.standard_normal())
            v += spec.noise_sd * rng.standard_normal(v.size)
            profiles.append(v)
            labels.append(names[k])
    x = np.column_stack(profiles)
    fids = [format_eem_feature(a, b) for a, b in zip(gx, gm)]
    pids = [f"{lab}_{i:03d}" for i, lab in enumerate(labels)]
    return Dictionary(x, tuple(fids), tuple(pids)), build_design(labels, names)
