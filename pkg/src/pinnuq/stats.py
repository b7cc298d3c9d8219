"""Posterior summarization and convergence diagnostics.

Predictive moments use the sample mean and the unbiased 1/(N-1) variance
over ensemble members; LPP is the Gaussian log score of the predictive
mean/std against a reference; R-hat is the plain (non-split) potential
scale reduction factor, with the split variant behind a flag.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff


@dataclass
class PredictiveField:
    """Pointwise predictive mean/std over an ensemble."""

    points: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    sample_values: np.ndarray | None = None

    def __post_init__(self):
        if self.mean.shape != self.std.shape or len(self.mean) != len(self.points):
            raise ValueError("points/mean/std lengths disagree")
        if np.any(self.std < 0):
            raise ValueError("negative predictive std")


@dataclass
class SummaryRow:
    """One (method, field) row of the comparison tables."""

    method: str
    field_name: str
    rl2: float
    linf: float
    avg_std: float
    lpp: float
    coverage: float
    wall_time_s: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.coverage <= 1.0:
            raise ValueError(f"coverage {self.coverage} outside [0, 1]")


@dataclass
class ChainDiagnostics:
    rhat: np.ndarray
    neg_logp_traces: list
    trace_params: dict = field(default_factory=dict)  # param index -> (chain, n) values


def chain_diagnostics(chain_samples, chain_neg_logp=None) -> ChainDiagnostics:
    """R-hat over chains plus trace extracts for the extreme parameters.

    Extracts the best-mixing (R-hat closest to 1) and worst-mixing
    (largest R-hat) parameters; chains are truncated to a common length.
    """
    n = min(s.shape[0] for s in chain_samples)
    samples = [np.asarray(s)[:n] for s in chain_samples]
    rh = rhat(samples)
    finite = np.where(np.isfinite(rh), rh, -np.inf)
    worst = int(np.argmax(finite))
    best = int(np.nanargmin(np.abs(rh - 1.0)))
    traces = {
        p: np.stack([s[:, p] for s in samples]) for p in {best, worst}
    }
    neg_logp = (
        [] if chain_neg_logp is None
        else [np.asarray(lp)[:n] for lp in chain_neg_logp]
    )
    return ChainDiagnostics(rh, neg_logp, traces)


def predictive_moments(ensemble, predict_fn, points, keep_samples=False):
    """Elementwise predictive mean/std of predict_fn(sample) over members.

    ``ensemble`` may be a PosteriorEnsemble or a plain (n, dim) array;
    ``predict_fn`` maps one flat parameter vector to values at ``points``.
    """
    samples = getattr(ensemble, "samples", ensemble)
    n = samples.shape[0]
    if n < 1:
        raise ValueError("empty ensemble")
    preds = np.empty((n, len(points)))
    for i in range(n):
        preds[i] = predict_fn(samples[i])
    mean = preds.mean(axis=0)
    std = preds.std(axis=0, ddof=1) if n > 1 else np.zeros_like(mean)
    return PredictiveField(
        np.asarray(points), mean, std, preds if keep_samples else None
    )


def lpp(pred: PredictiveField, reference) -> float:
    """Log predictive probability: -sum[(mu-u)^2/(2 s^2) + log(2 pi s^2)/2]."""
    ref = np.asarray(reference, dtype=np.float64)
    if ref.shape != pred.mean.shape:
        raise ValueError("reference length does not match the field")
    s = pred.std
    if np.any(s < 1e-12):
        warnings.warn(
            f"{int(np.sum(s < 1e-12))} predictive stds floored at 1e-12 for LPP",
            stacklevel=2,
        )
        s = np.maximum(s, 1e-12)
    misfit = (pred.mean - ref) ** 2 / (2.0 * s**2)
    return float(-(misfit + 0.5 * np.log(2.0 * np.pi * s**2)).sum())


def rel_errors(mean, reference):
    """(relative l2 error, absolute l-infinity error) of a mean prediction."""
    mean = np.asarray(mean, dtype=np.float64)
    ref = np.asarray(reference, dtype=np.float64)
    if mean.shape != ref.shape:
        raise ValueError("length mismatch")
    linf = float(np.max(np.abs(mean - ref)))
    denom = np.linalg.norm(ref)
    if denom == 0.0:
        raise ValueError("reference has zero norm; relative l2 undefined")
    rl2 = float(np.linalg.norm(mean - ref) / denom)
    return rl2, linf


def coverage(pred: PredictiveField, reference, k=2.0) -> float:
    """Fraction of points with |mean - reference| <= k * std."""
    ref = np.asarray(reference, dtype=np.float64)
    if ref.shape != pred.mean.shape:
        raise ValueError("reference length does not match the field")
    return float(np.mean(np.abs(pred.mean - ref) <= k * pred.std))


def rhat(chains, split=False):
    """Gelman-Rubin potential scale reduction factor per parameter.

    ``chains``: sequence of (n, dim) arrays, equal lengths, >= 2 chains of
    >= 2 samples.  Plain variant: W = mean within-chain variance, B = n *
    variance of chain means, Vhat = (n-1)/n W + B/n, R = sqrt(Vhat/W).
    W = 0 yields an +inf sentinel.  ``split=True`` halves each chain first.
    """
    arrs = [np.atleast_2d(np.asarray(c, dtype=np.float64)) for c in chains]
    lengths = {a.shape[0] for a in arrs}
    if len(lengths) != 1:
        raise ValueError(f"unequal chain lengths {sorted(lengths)}")
    if split:
        half = arrs[0].shape[0] // 2
        arrs = [a[:half] for a in arrs] + [a[-half:] for a in arrs]
    stacked = np.stack(arrs)  # (m, n, dim)
    m, n, _dim = stacked.shape
    if m < 2 or n < 2:
        raise ValueError("need >= 2 chains of >= 2 samples")
    W = stacked.var(axis=1, ddof=1).mean(axis=0)
    B = n * stacked.mean(axis=1).var(axis=0, ddof=1)
    vhat = (n - 1) / n * W + B / n
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.sqrt(vhat / W)
    out[W == 0] = np.inf
    return out


def subspace_grid(theta1, theta2, theta3, a_values, b_values, log_density_fn):
    """Log density on the plane through three parameter vectors.

    The lattice point (a, b) evaluates theta = a*theta1 + b*theta2 +
    (1-a-b)*theta3, so the corners (1,0), (0,1), (0,0) reproduce the three
    anchors exactly.  Returns (grid[len(a), len(b)], orthonormal_basis)
    where the basis rows are the Gram-Schmidt orthonormalization of
    theta1-theta2 and theta1-theta3 (for axis scaling in plots).
    """
    t1 = np.asarray(theta1, dtype=np.float64)
    t2 = np.asarray(theta2, dtype=np.float64)
    t3 = np.asarray(theta3, dtype=np.float64)
    if t1.shape != t2.shape or t1.shape != t3.shape:
        raise ValueError("anchor vectors must share one layout")
    v1 = t1 - t2
    v2 = t1 - t3
    scale = max(np.linalg.norm(t1), 1.0)
    if np.linalg.norm(v1) < 1e-12 * scale:
        raise ValueError("theta1 - theta2 is degenerate")
    u1 = v1 / np.linalg.norm(v1)
    w = v2 - (v2 @ u1) * u1
    if np.linalg.norm(w) < 1e-12 * scale:
        raise ValueError("theta1 - theta3 is linearly dependent on theta1 - theta2")
    u2 = w / np.linalg.norm(w)
    a_values = np.asarray(a_values, dtype=np.float64)
    b_values = np.asarray(b_values, dtype=np.float64)
    grid = np.empty((a_values.size, b_values.size))
    for i, a in enumerate(a_values):
        for j, b in enumerate(b_values):
            theta = t1 * a + t2 * b + t3 * (1.0 - a - b)
            grid[i, j] = log_density_fn(theta)
    return grid, np.stack([u1, u2])


def hessian_eigenspectrum(log_density_fn, at, top_k=None, max_dim=None):
    """Descending eigenvalues of the Hessian of -log density (top_k of them).

    ``log_density_fn`` must be traceable by the autodiff module (it receives
    a list of Expr parameters).  Costly: one graph evaluation per dimension.
    """
    at = np.asarray(at, dtype=np.float64)
    kwargs = {} if max_dim is None else {"max_dim": max_dim}
    H = autodiff.hessian(lambda p: -log_density_fn(p), at, **kwargs)
    eigs = np.linalg.eigvalsh(H)[::-1]
    return eigs if top_k is None else eigs[: int(top_k)]
