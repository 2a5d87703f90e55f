"""Simulation config files: ``key = value`` lines, ``#`` comments.

Recognised keys (lists are comma separated)::

    mode            estimation | prediction | stderr
    p               number of features of the synthetic dictionary
    n_per_category  synthetic profiles per source category
    K               number of source categories
    alphas          dictionary fractions, e.g. 0.5, 1.0
    theta_count     number of Dirichlet theta draws
    replicates      Monte Carlo replicates per (alpha, theta) cell
    seed            master seed (integer)
    mask_excitation excitation wavelengths left unobserved (prediction mode)
    nu_floor        lower bound forced on nu* (test rigs)

Optional extras: ``dictionary`` and ``labels`` (CSV paths, relative to the
config file) replace the synthetic dictionary; ``n_excitation`` sets the
synthetic grid; ``noise_sd`` the synthetic measurement noise;
``mask_excitation_count`` masks that many of the highest excitation
wavelengths; ``workers`` sets the thread count.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .io import load_dictionary, parse_eem_feature
from .predictors import excitation_mask
from .simulation import ExperimentConfig, stream, DICTIONARY_STREAM
from .synthetic import SyntheticSpec, grid_shape, synthetic_dictionary

KNOWN_KEYS = {
    "mode", "p", "n_per_category", "K", "alphas", "theta_count", "replicates", "seed",
    "mask_excitation", "nu_floor", "dictionary", "labels", "n_excitation", "noise_sd",
    "mask_excitation_count", "workers",
}
_SECTION = "simulate"


@dataclass(frozen=True)
class StudySettings:
    values: dict[str, str]
    base_dir: Path

    def get(self, key, cast=str, default=None):
        if key not in self.values:
            if default is None:
                raise ValidationError(f"config is missing required key {key!r}")
            return default
        raw = self.values[key]
        try:
            return cast(raw)
        except ValueError:
            raise ValidationError(f"config key {key!r}: cannot parse {raw!r}") from None


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.replace(";", ",").split(",") if t.strip())


def parse_config_text(text: str, base_dir=".") -> StudySettings:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    parser.optionxform = str  # keys are case sensitive ("K")
    try:
        parser.read_string(f"[{_SECTION}]\n{text}")
    except configparser.Error as exc:
        raise ValidationError(f"malformed config: {exc}") from None
    values = dict(parser[_SECTION])
    unknown = sorted(set(values) - KNOWN_KEYS)
    if unknown:
        raise ValidationError(f"unknown config key(s): {', '.join(unknown)}")
    return StudySettings(values, Path(base_dir))


def read_config(path) -> StudySettings:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text, path.parent)


def build_experiment(settings: StudySettings, workers: int | None = None) -> ExperimentConfig:
    g = settings.get
    seed = g("seed", int)
    if "dictionary" in settings.values:
        dictionary, design = load_dictionary(settings.base_dir / g("dictionary"),
                                             settings.base_dir / g("labels"))
    else:
        p = g("p", int)
        n_ex, n_em = grid_shape(p, g("n_excitation", int, default=0) or None)
        spec = SyntheticSpec(n_excitation=n_ex, n_emission=n_em, K=g("K", int),
                             n_per_category=g("n_per_category", int),
                             noise_sd=g("noise_sd", float, default=SyntheticSpec.noise_sd))
        dictionary, design = synthetic_dictionary(spec, stream(seed, DICTIONARY_STREAM))

    mode = g("mode")
    mask = None
    if mode == "prediction":
        excitations = set(_floats(g("mask_excitation", default=" ")))
        count = g("mask_excitation_count", int, default=0)
        if count:
            grid = sorted({parse_eem_feature(f)[0] for f in dictionary.feature_ids})
            excitations |= set(grid[-count:])
        if not excitations:
            raise ValidationError("prediction mode needs mask_excitation or mask_excitation_count")
        mask = excitation_mask(dictionary.feature_ids, sorted(excitations))

    nu_floor = g("nu_floor", float, default=-1.0)
    return ExperimentConfig(
        mode=mode,
        dictionary=dictionary,
        design=design,
        alphas=g("alphas", _floats, default=(0.5, 1.0)),
        theta_count=g("theta_count", int),
        replicates=g("replicates", int),
        seed=seed,
        observed_mask=mask,
        nu_floor=None if nu_floor < 0 else nu_floor,
        workers=workers or g("workers", int, default=1),
    )
