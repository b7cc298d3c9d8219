"""Uncertainty quantification for inverse-PDE neural-network models.

Samples posterior distributions of network parameters by repeatedly
minimizing a noise-perturbed loss (randomize-then-minimize), and provides
NUTS-HMC, Stein variational gradient descent, and deep-ensemble baselines,
together with the statistics and diagnostics needed to compare them on
three benchmark inverse problems.
"""

__version__ = "0.1.0"

from . import autodiff, kernels, loss, mlp, problems, samplers, stats, toys
from . import io as experiment_io

__all__ = [
    "autodiff",
    "kernels",
    "loss",
    "mlp",
    "problems",
    "samplers",
    "stats",
    "toys",
    "experiment_io",
    "__version__",
]
