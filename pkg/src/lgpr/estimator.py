"""scikit-learn style wrapper around training and prediction."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import Dataset
from .kernels import AnnealingSchedule
from .optimize import TrainConfig, train
from .predict import log_predictive_density, predict_mixture, sample_posterior


class LatentGPRegressor(RegressorMixin, BaseEstimator):
    """Mixture-of-functions GP regression with one latent coordinate per component.

    Each training point is softly, then (as annealing sharpens the simplex
    transform) almost exclusively, explained by one of ``n_components``
    kernels.  ``predict`` returns the mixture mean; ``predict_mixture`` gives
    every component's moments and probabilities.

    Parameters mirror :class:`lgpr.optimize.TrainConfig`.
    """

    def __init__(self, n_components=2, n_inducing=20, n_samples=1, max_iter=1000, step_size=1e-2,
                 alpha0=1.0, alpha_growth=1.005, alpha_max=50.0, component_kernels=None,
                 kernel="factorizing", psi="mc", latent_step_scale=0.1, restarts=1, warmup=0,
                 random_state=0):
        self.n_components = n_components
        self.n_inducing = n_inducing
        self.n_samples = n_samples
        self.max_iter = max_iter
        self.step_size = step_size
        self.alpha0 = alpha0
        self.alpha_growth = alpha_growth
        self.alpha_max = alpha_max
        self.component_kernels = component_kernels
        self.kernel = kernel
        self.psi = psi
        self.latent_step_scale = latent_step_scale
        self.restarts = restarts
        self.warmup = warmup
        self.random_state = random_state

    def _config(self, n):
        seed = self.random_state
        if seed is None:
            seed = 0
        elif not isinstance(seed, (int, np.integer)):
            raise ValueError("random_state must be an integer (a fixed seed keeps runs reproducible)")
        kernels = None if self.component_kernels is None else list(self.component_kernels)
        return TrainConfig(components=self.n_components, inducing=min(self.n_inducing, n),
                           samples=self.n_samples, iterations=self.max_iter, step_size=self.step_size,
                           annealing=AnnealingSchedule(self.alpha0, self.alpha_growth, self.alpha_max),
                           seed=int(seed), kernel=self.kernel, component_kernels=kernels, psi=self.psi,
                           latent_step_scale=self.latent_step_scale, restarts=self.restarts,
                           warmup=self.warmup)

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True)
        self._y_1d = y.ndim == 1
        self.n_features_in_ = X.shape[1]
        self.model_ = train(Dataset(X, y), self._config(X.shape[0]))
        self.labels_ = self.model_.hard_assignments
        self.bound_trace_ = np.array([v for _, v in self.model_.bound_trace])
        return self

    def _check(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, model was fitted with {self.n_features_in_}")
        return X

    def predict_mixture(self, X):
        X = self._check(X)
        return predict_mixture(self.model_, X)

    def predict(self, X, return_std=False):
        pred = self.predict_mixture(X)
        mean = pred.mixture_mean
        if return_std:
            # total variance of the Gaussian mixture
            second = np.einsum("nl,nlp->np", pred.probs, pred.stds ** 2 + pred.means ** 2)
            std = np.sqrt(np.maximum(second - mean ** 2, 0.0))
            return (mean[:, 0], std[:, 0]) if self._y_1d else (mean, std)
        return mean[:, 0] if self._y_1d else mean

    def transform(self, X):
        """Component probabilities at ``X``, shape ``(n, n_components)``."""
        return self.predict_mixture(X).probs

    def predict_proba(self, X):
        return self.transform(X)

    def sample_y(self, X, n_samples=1, random_state=0):
        X = self._check(X)
        samples, _ = sample_posterior(self.model_, X, n_samples, random_state)
        return samples[..., 0] if self._y_1d else samples

    def score_samples(self, X, y):
        """Log predictive density of each ``(x, y)`` pair under the mixture."""
        X = self._check(X)
        return log_predictive_density(self.model_, X, y)
