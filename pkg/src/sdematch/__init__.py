"""Drift and diffusion estimation for Ito SDEs from noisy discrete
observations.

The pipeline: simulate or load observations, fit a latent-noise GP
observation model by evidence maximization (recovering kernel
hyperparameters, noise scales and the diffusion matrix), then estimate drift
parameters by matching sampled derivative distributions, either
adversarially (``ares``) or by minimizing an unbiased MMD^2 (``mars``).
"""

from ._linalg import CholeskyError
from .ares import AresConfig, CriticNet, ares_infer
from .gpfit import FitOptions, GpFitResult, Standardizer, fit, log_evidence
from .kernels import KernelSpec, build_kernel_matrices
from .mmd import InferenceDivergence, MarsConfig, mars_infer, mmd2_unbiased
from .ou_noise import DiffusionMatrix, increments_variance, ou_cov
from .sampling import DerivativeSampler, ancestral_sample, sample_mvn
from .systems import (
    ObservationSet,
    SdeSystem,
    Trajectory,
    builtin_systems,
    euler_maruyama,
    get_system,
    observe,
)

__version__ = "0.1.0"

__all__ = [
    "AresConfig",
    "CholeskyError",
    "CriticNet",
    "DerivativeSampler",
    "DiffusionMatrix",
    "FitOptions",
    "GpFitResult",
    "InferenceDivergence",
    "KernelSpec",
    "MarsConfig",
    "ObservationSet",
    "SdeSystem",
    "Standardizer",
    "Trajectory",
    "ancestral_sample",
    "ares_infer",
    "build_kernel_matrices",
    "builtin_systems",
    "euler_maruyama",
    "fit",
    "get_system",
    "increments_variance",
    "log_evidence",
    "mars_infer",
    "mmd2_unbiased",
    "observe",
    "ou_cov",
    "sample_mvn",
]
