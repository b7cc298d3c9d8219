"""Deterministic, Bayesian, and noise-perturbed training objectives.

Three aligned views of the same misfit terms:

* ``pinn_loss``       — weighted mean-square terms plus an unweighted
  sum-of-squares parameter regularizer (its minimizer is the MAP under an
  isotropic Gaussian prior).
* ``energy``          — negative log posterior up to a constant: each term
  divided by twice its likelihood variance, parameters by 2 sigma_p^2.
* ``randomized_loss`` — the energy with every squared term shifted by a
  Gaussian noise draw; minimizing it for independent draws yields the
  randomize-then-minimize posterior samples.

``sigmas_from_weights`` maps deterministic loss weights to the likelihood
standard deviations so that energy and pinn_loss share a minimizer.

Two conventions worth stating explicitly: every randomized data term keeps
its observation, [model - observed - omega]^2, and the randomized prior
term is the squared difference (theta - omega)^2.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

SIGMA_FLOOR = 1e-12

SIGMA_MODES = ("weighted", "weighted_additive", "uniform", "regularized")


def _check_positive(mapping, what):
    for name, v in mapping.items():
        if not v > 0:
            raise ValueError(f"{what}[{name!r}] must be > 0, got {v}")


@dataclass(frozen=True)
class LossWeights:
    """Per-term positive weights, keyed by the evaluator's term names."""

    weights: dict

    def __post_init__(self):
        w = {str(k): float(v) for k, v in self.weights.items()}
        _check_positive(w, "weights")
        object.__setattr__(self, "weights", w)

    def __getitem__(self, name):
        return self.weights[name]

    def to_dict(self):
        return dict(self.weights)


@dataclass(frozen=True)
class LikelihoodSigmas:
    """Per-term likelihood standard deviations plus the prior sigma_p."""

    sigmas: dict
    sigma_p: float

    def __post_init__(self):
        s = {str(k): float(v) for k, v in self.sigmas.items()}
        _check_positive(s, "sigmas")
        if not self.sigma_p > 0:
            raise ValueError(f"sigma_p must be > 0, got {self.sigma_p}")
        clamped = {k: max(v, SIGMA_FLOOR) for k, v in s.items()}
        if clamped != s:
            warnings.warn("sigma below 1e-12 clamped", stacklevel=2)
        object.__setattr__(self, "sigmas", clamped)
        object.__setattr__(
            self, "sigma_p", max(float(self.sigma_p), SIGMA_FLOOR)
        )

    def __getitem__(self, name):
        return self.sigmas[name]

    def to_dict(self):
        return {"sigmas": dict(self.sigmas), "sigma_p": self.sigma_p}

    @staticmethod
    def from_dict(d):
        return LikelihoodSigmas(d["sigmas"], d["sigma_p"])


@dataclass(frozen=True)
class NoiseDraw:
    """One realization of the injected Gaussian noises, one vector per term."""

    terms: dict
    prior: np.ndarray

    def __post_init__(self):
        t = {k: np.asarray(v, dtype=np.float64) for k, v in self.terms.items()}
        object.__setattr__(self, "terms", t)
        object.__setattr__(
            self, "prior", np.asarray(self.prior, dtype=np.float64)
        )


def sigmas_from_weights(
    weights: LossWeights, sigma, counts, mode="weighted", data_term="y", eps=0.0
) -> LikelihoodSigmas:
    """Map deterministic weights to likelihood sigmas.

    ``counts`` maps term name -> number of points.  Modes:

    * ``weighted`` / ``weighted_additive``: sigma_p^2 = sigma^2 *
      lambda_data / N_data and sigma_t^2 = N_t sigma_p^2 / lambda_t (so the
      data term gets exactly sigma).  The additive alias marks problems
      whose source is represented through the state network.
    * ``uniform``: every likelihood sigma equals sigma, standard-normal
      prior (sigma_p = 1).
    * ``regularized``: as weighted with sigma_p^2 = (sigma + eps)^2 *
      lambda_data / N_data; eps tuned to maximize LPP.
    """
    if mode not in SIGMA_MODES:
        raise ValueError(f"unknown sigma mode {mode!r}")
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    counts = {k: int(v) for k, v in counts.items()}
    for name, n in counts.items():
        if n <= 0:
            raise ValueError(f"counts[{name!r}] must be > 0, got {n}")
    if mode == "uniform":
        return LikelihoodSigmas({k: float(sigma) for k in counts}, 1.0)
    if data_term not in counts:
        raise ValueError(f"data_term {data_term!r} not among counts")
    base = sigma + eps if mode == "regularized" else sigma
    sigma_p2 = base**2 * weights[data_term] / counts[data_term]
    sigmas = {
        name: float(np.sqrt(counts[name] * sigma_p2 / weights[name]))
        for name in counts
    }
    return LikelihoodSigmas(sigmas, float(np.sqrt(sigma_p2)))


def select_eps_max_lpp(eps_grid, lpp_fn):
    """Grid search: the eps (regularized mode) with the largest LPP."""
    best_eps, best = None, -np.inf
    for eps in eps_grid:
        v = lpp_fn(float(eps))
        if v > best:
            best_eps, best = float(eps), v
    return best_eps, best


def draw_noise(sigmas: LikelihoodSigmas, counts, n_params, seed) -> NoiseDraw:
    """i.i.d. Gaussian noise per term (in term order) and for the prior."""
    rng = np.random.default_rng(seed)
    terms = {}
    for name, n in counts.items():
        if n < 0:
            raise ValueError(f"counts[{name!r}] must be >= 0")
        terms[name] = rng.normal(0.0, sigmas[name], int(n))
    prior = rng.normal(0.0, sigmas.sigma_p, int(n_params))
    return NoiseDraw(terms, prior)


def zero_noise(counts, n_params) -> NoiseDraw:
    return NoiseDraw(
        {name: np.zeros(int(n)) for name, n in counts.items()},
        np.zeros(int(n_params)),
    )


# -- objective values and gradients -----------------------------------------


def pinn_loss(params, evaluator, weights: LossWeights) -> float:
    """sum_t (lambda_t / N_t) * sum_i misfit_i^2  +  sum_j params_j^2."""
    params = np.asarray(params, dtype=np.float64)
    values = evaluator.term_values(params)
    total = float(params @ params)
    for name in evaluator.term_names:
        m = values[name] - evaluator.targets[name]
        total += weights[name] / m.shape[0] * float(m @ m)
    return total


def pinn_loss_grad(params, evaluator, weights: LossWeights):
    params = np.asarray(params, dtype=np.float64)
    values = evaluator.term_values(params)
    total = float(params @ params)
    seeds = {}
    for name in evaluator.term_names:
        m = values[name] - evaluator.targets[name]
        c = weights[name] / m.shape[0]
        total += c * float(m @ m)
        seeds[name] = 2.0 * c * m
    grad = evaluator.term_backprop(seeds)
    grad += 2.0 * params
    return total, grad


def energy(params, evaluator, sigmas: LikelihoodSigmas) -> float:
    """Negative log posterior up to an additive constant."""
    params = np.asarray(params, dtype=np.float64)
    values = evaluator.term_values(params)
    total = float(params @ params) / (2.0 * sigmas.sigma_p**2)
    for name in evaluator.term_names:
        m = values[name] - evaluator.targets[name]
        total += float(m @ m) / (2.0 * sigmas[name] ** 2)
    return total


def energy_grad(params, evaluator, sigmas: LikelihoodSigmas):
    params = np.asarray(params, dtype=np.float64)
    values = evaluator.term_values(params)
    total = float(params @ params) / (2.0 * sigmas.sigma_p**2)
    seeds = {}
    for name in evaluator.term_names:
        m = values[name] - evaluator.targets[name]
        inv = 1.0 / sigmas[name] ** 2
        total += 0.5 * inv * float(m @ m)
        seeds[name] = inv * m
    grad = evaluator.term_backprop(seeds)
    grad += params / sigmas.sigma_p**2
    return total, grad


def _check_noise(evaluator, noise: NoiseDraw, n_params):
    for name in evaluator.term_names:
        want = evaluator.targets[name].shape[0]
        got = noise.terms[name].shape[0] if name in noise.terms else -1
        if got != want:
            raise ValueError(
                f"noise for term {name!r} has length {got}, expected {want}"
            )
    if noise.prior.shape[0] != n_params:
        raise ValueError(
            f"prior noise length {noise.prior.shape[0]}, expected {n_params}"
        )


def randomized_loss(params, evaluator, sigmas, noise: NoiseDraw) -> float:
    """Energy with every squared term shifted by its noise draw."""
    params = np.asarray(params, dtype=np.float64)
    _check_noise(evaluator, noise, params.shape[0])
    values = evaluator.term_values(params)
    r = params - noise.prior
    total = float(r @ r) / (2.0 * sigmas.sigma_p**2)
    for name in evaluator.term_names:
        m = values[name] - evaluator.targets[name] - noise.terms[name]
        total += float(m @ m) / (2.0 * sigmas[name] ** 2)
    return total


def randomized_loss_grad(params, evaluator, sigmas, noise: NoiseDraw):
    params = np.asarray(params, dtype=np.float64)
    _check_noise(evaluator, noise, params.shape[0])
    values = evaluator.term_values(params)
    r = params - noise.prior
    total = float(r @ r) / (2.0 * sigmas.sigma_p**2)
    seeds = {}
    for name in evaluator.term_names:
        m = values[name] - evaluator.targets[name] - noise.terms[name]
        inv = 1.0 / sigmas[name] ** 2
        total += 0.5 * inv * float(m @ m)
        seeds[name] = inv * m
    grad = evaluator.term_backprop(seeds)
    grad += r / sigmas.sigma_p**2
    return total, grad
