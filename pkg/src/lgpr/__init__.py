"""Latent-variable GP regression for multimodal and non-stationary data."""

from . import _config  # noqa: F401  (enables double precision before anything else)
from .data import Dataset, gen_antiphase, gen_gp_draws, gen_heteroscedastic, gen_sshape, load_dataset, load_jura
from .estimator import LatentGPRegressor
from .kernels import (AnnealingSchedule, ExtendedInput, KernelError, KernelSpec, eval_kernel, factorizing,
                      juxtaposition, kernel_matrix, linear, se, simplex_transform, white)
from .optimize import TrainConfig, TrainedModel, gradient_check, load_checkpoint, save_checkpoint, train
from .predict import (MixturePrediction, component_posterior, component_probabilities, predict_mixture,
                      sample_posterior)
from .variational import PsiStats, VariationalState, kl_term, lower_bound, psi_analytic_se, psi_monte_carlo

__version__ = "0.1.0"
