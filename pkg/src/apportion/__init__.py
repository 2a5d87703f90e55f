"""Linear source apportionment from a dictionary of labelled reference profiles."""

__version__ = "0.1.0"

from .covariance import Covariance, DenseCovariance, LowRankPlusIsotropic
from .errors import ApportionError, NumericalError, ValidationError
from .estimators import (Estimate, Method, estimate_atr, estimate_fgls, estimate_oracle,
                         estimate_rts, rts_crosschecks)
from .io import load_dictionary, read_sample
from .model import (ApportionmentBasis, Dictionary, Profile, SourceDesign, build_design,
                    decompose)
from .predictors import (PartitionedProblem, excitation_mask, partition, predict_atr,
                         predict_fgls, predict_oracle_blup, predict_rts)
from .simulation import (ExperimentConfig, ExperimentReport, fit_population,
                         ledoit_wolf_scalars, run_experiment, sample_theta)
from .variability import (bias_envelope, gamma_threshold, standard_errors_rts,
                          subspace_bases, variance_profiles)

__all__ = [
    "ApportionError", "ApportionmentBasis", "Covariance", "DenseCovariance", "Dictionary",
    "Estimate", "ExperimentConfig", "ExperimentReport", "LowRankPlusIsotropic", "Method",
    "NumericalError", "PartitionedProblem", "Profile", "SourceDesign", "ValidationError",
    "bias_envelope", "build_design", "decompose", "estimate_atr", "estimate_fgls",
    "estimate_oracle", "estimate_rts", "excitation_mask", "fit_population",
    "gamma_threshold", "ledoit_wolf_scalars", "load_dictionary", "partition",
    "predict_atr", "predict_fgls", "predict_oracle_blup", "predict_rts", "read_sample",
    "rts_crosschecks", "run_experiment", "sample_theta", "standard_errors_rts",
    "subspace_bases", "variance_profiles",
]
