"""Surrogate-assisted optimization toolkit for expensive electromagnetic-
transient power system studies: GP surrogates with three hyperparameter
inference backends, expected-improvement and expected-feasibility
acquisition, a desk-scale transformer-energization solver, baseline
optimizers, and exceedance-probability estimation."""

from .gp import Dataset, GpPosterior, Hyperparams, KernelKind
from .inference import GradAscentConfig, McmcConfig, PriorSpec

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "GpPosterior",
    "Hyperparams",
    "KernelKind",
    "GradAscentConfig",
    "McmcConfig",
    "PriorSpec",
    "__version__",
]
