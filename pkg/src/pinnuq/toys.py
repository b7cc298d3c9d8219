"""Small analytically tractable models for validating the samplers.

A linear-in-parameters Gaussian model has a closed-form posterior, and the
randomize-then-minimize construction reproduces it exactly (up to optimizer
tolerance), which makes these the primary correctness gates for the
sampling machinery.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class LinearGaussianEvaluator:
    """Term evaluator for obs = X @ a + noise with term name 'u'."""

    term_names = ("u",)

    def __init__(self, X, y):
        self.X = np.asarray(X, dtype=np.float64)
        self.targets = {"u": np.asarray(y, dtype=np.float64)}
        self.n_params = self.X.shape[1]

    def term_counts(self):
        return {"u": self.X.shape[0]}

    def term_values(self, params):
        return {"u": self.X @ params}

    def term_backprop(self, seeds):
        return self.X.T @ seeds["u"]


@dataclass(frozen=True)
class LinearGaussianProblem:
    """y = X a + eps with eps ~ N(0, sigma_y^2) and prior a ~ N(0, sigma_p^2 I)."""

    X: np.ndarray
    y: np.ndarray
    sigma_y: float
    sigma_p: float

    name = "linear_gaussian_toy"
    term_names = ("u",)
    data_term = "u"

    def __post_init__(self):
        object.__setattr__(self, "X", np.asarray(self.X, dtype=np.float64))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=np.float64))

    @property
    def n_params(self):
        return self.X.shape[1]

    def evaluator(self):
        return LinearGaussianEvaluator(self.X, self.y)

    def init_params(self, seed):
        return np.random.default_rng(seed).normal(0.0, 0.1, self.n_params)

    def sigmas(self):
        from .loss import LikelihoodSigmas

        return LikelihoodSigmas({"u": self.sigma_y}, self.sigma_p)

    def posterior(self):
        """Closed-form Gaussian posterior (mean, covariance)."""
        P = self.X.T @ self.X / self.sigma_y**2 + np.eye(self.n_params) / self.sigma_p**2
        cov = np.linalg.inv(P)
        mean = cov @ (self.X.T @ self.y) / self.sigma_y**2
        return mean, cov

    def log_density(self, a):
        """Unnormalized posterior log density (negative energy)."""
        r = self.X @ a - self.y
        return float(
            -0.5 * (r @ r) / self.sigma_y**2 - 0.5 * (a @ a) / self.sigma_p**2
        )


def random_linear_gaussian(n_obs, n_params, sigma_y, sigma_p, seed):
    """A reproducible random instance with data drawn from the model."""
    rng = np.random.default_rng(seed)
    X = rng.normal(0.0, 1.0, (n_obs, n_params))
    a_true = rng.normal(0.0, sigma_p, n_params)
    y = X @ a_true + rng.normal(0.0, sigma_y, n_obs)
    return LinearGaussianProblem(X, y, float(sigma_y), float(sigma_p))
