"""Posterior approximation engines and the shared Adam minimizer.

* ``rpinn_sample``  — randomize-then-minimize: every posterior sample is
  the minimizer of the noise-perturbed loss for an independent noise draw.
  All samples are accepted; a Metropolis correction would need the
  noise-to-minimizer map Jacobian per sample, and rejection rates observed
  for this family of methods are negligible.
* ``deep_ensemble`` — repeated deterministic training from different
  random initializations.
* ``nuts_sample``   — No-U-Turn HMC with dual-averaging step size.
* ``svgd_sample``   — Stein variational gradient descent with an RBF
  kernel and median-trick bandwidth, Adam-driven updates.

rPINN/DE are embarrassingly parallel across sample indices; every sample
derives its RNG streams from (base_seed, index) so results are bitwise
independent of the worker count.  HMC chains are sequential internally.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from . import loss as loss_mod
from . import mlp
from .kernels import engine_name

INIT_SEED_MIX = 0x9E3779B9  # decorrelates init streams from noise streams
DELTA_MAX = 1000.0  # NUTS divergence threshold on the energy error


class NonFiniteLossError(RuntimeError):
    """Objective became non-finite; carries the last finite iterate."""

    def __init__(self, message, last_iterate, iteration):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.iteration = iteration


class SamplingError(RuntimeError):
    """Too many per-sample failures to trust the ensemble."""


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-3
    max_iters: int = 20000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_tol: float = 1e-6

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1/beta2 must lie in (0, 1)")


@dataclass(frozen=True)
class HmcConfig:
    n_chains: int = 4
    burn_in: int = 500
    n_samples: int = 1000
    target_accept: float = 0.75
    max_tree_depth: int = 10
    mass_matrix: str = "identity"

    def __post_init__(self):
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.mass_matrix != "identity":
            raise ValueError("only the identity mass matrix is supported")


@dataclass(frozen=True)
class SvgdConfig:
    n_particles: int = 100
    n_steps: int = 2000
    learning_rate: float = 1e-3
    kernel: str = "rbf_median"

    def __post_init__(self):
        if self.n_particles < 2:
            raise ValueError("n_particles must be >= 2")
        if self.kernel != "rbf_median":
            raise ValueError("only the rbf_median kernel is supported")


@dataclass
class SampleMeta:
    index: int
    seed: int
    final_loss: float
    iterations: int
    accepted: bool


@dataclass
class PosteriorEnsemble:
    """Ordered posterior samples plus per-sample metadata."""

    method: str
    problem_id: str
    layout_meta: dict
    samples: np.ndarray
    meta: list
    sigmas: dict | None = None
    sample_logp: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    @property
    def n_samples(self):
        return self.samples.shape[0]

    @property
    def n_failed(self):
        return sum(1 for m in self.meta if not m.accepted)


# -- Adam ---------------------------------------------------------------


@dataclass
class AdamResult:
    params: np.ndarray
    value: float
    iterations: int
    converged: bool


def adam_minimize(value_and_grad, x0, cfg: OptimizerConfig) -> AdamResult:
    """Full-batch Adam; stops at max_iters or when ||grad||_2 < grad_tol."""
    x = np.array(x0, dtype=np.float64)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    lr, b1, b2, eps = cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps
    converged = False
    t = 0
    for t in range(1, cfg.max_iters + 1):
        f, g = value_and_grad(x)
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            raise NonFiniteLossError(
                f"non-finite objective at iteration {t}", x.copy(), t
            )
        if np.linalg.norm(g) < cfg.grad_tol:
            converged = True
            break
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        mhat = m / (1.0 - b1**t)
        vhat = v / (1.0 - b2**t)
        x -= lr * mhat / (np.sqrt(vhat) + eps)
    f_final = value_and_grad(x)[0]
    return AdamResult(x, float(f_final), t, converged)


# -- rPINN and deep ensemble ----------------------------------------------


def _problem_id(setup):
    p = getattr(setup, "problem", setup)
    return getattr(p, "name", type(p).__name__)


def _layout_meta_of(setup):
    layout = getattr(setup, "layout", None)
    if layout is not None:
        return mlp._layout_meta(layout)
    return {"kind": "flat", "dim": int(setup.evaluator().n_params)}


def _run_indices(setup, kind, aux, indices, base_seed, opt_cfg, init_policy, warm):
    """Minimize the objective for each sample index; one evaluator per call."""
    ev = setup.evaluator()
    counts = ev.term_counts()
    out = []
    for k in indices:
        if kind == "rpinn":
            noise = loss_mod.draw_noise(aux, counts, ev.n_params, base_seed + k)
            fg = lambda x: loss_mod.randomized_loss_grad(x, ev, aux, noise)
            if init_policy == "warm":
                x0 = warm
            else:
                x0 = setup.init_params(base_seed + k + INIT_SEED_MIX)
        else:  # deep ensemble: deterministic loss, fresh init per member
            fg = lambda x: loss_mod.pinn_loss_grad(x, ev, aux)
            x0 = setup.init_params(base_seed + k)
        try:
            res = adam_minimize(fg, x0, opt_cfg)
            out.append((k, res.params, res.value, res.iterations, True, ""))
        except NonFiniteLossError as e:
            out.append((k, None, np.nan, e.iteration, False, str(e)))
    return out


def _run_all(setup, kind, aux, n_ens, base_seed, opt_cfg, init_policy, warm, n_workers):
    indices = list(range(n_ens))
    if n_workers <= 1 or n_ens <= 1:
        return _run_indices(
            setup, kind, aux, indices, base_seed, opt_cfg, init_policy, warm
        )
    chunks = [indices[i::n_workers] for i in range(n_workers)]
    results = []
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        futures = [
            pool.submit(
                _run_indices, setup, kind, aux, chunk, base_seed, opt_cfg,
                init_policy, warm,
            )
            for chunk in chunks
            if chunk
        ]
        for fut in futures:
            results.extend(fut.result())
    results.sort(key=lambda r: r[0])
    return results


def _assemble(setup, method, results, sigmas, base_seed, info):
    kept, meta = [], []
    for k, params, val, iters, ok, _err in results:
        seed = base_seed + k
        meta.append(SampleMeta(k, seed, float(val), int(iters), bool(ok)))
        if ok:
            kept.append(params)
    n_failed = len(results) - len(kept)
    if n_failed > 0.1 * len(results):
        raise SamplingError(
            f"{n_failed}/{len(results)} sample minimizations failed"
        )
    samples = np.array(kept) if kept else np.empty((0, setup.evaluator().n_params))
    info = dict(info, n_failed=n_failed, engine=engine_name())
    return PosteriorEnsemble(
        method=method,
        problem_id=_problem_id(setup),
        layout_meta=_layout_meta_of(setup),
        samples=samples,
        meta=meta,
        sigmas=sigmas.to_dict() if sigmas is not None else None,
        info=info,
    )


def rpinn_sample(
    setup,
    sigmas: loss_mod.LikelihoodSigmas,
    n_ens,
    base_seed,
    opt_cfg: OptimizerConfig | None = None,
    init_policy="fresh",
    n_workers=1,
    map_params=None,
) -> PosteriorEnsemble:
    """Randomize-then-minimize ensemble of ``n_ens`` accepted samples.

    Sample k uses noise seed base_seed + k; every sample is accepted.
    ``init_policy`` 'fresh' re-initializes the network per sample, 'warm'
    starts each minimization from the MAP (computed once if not given).
    """
    if n_ens < 1:
        raise ValueError("n_ens must be >= 1")
    if init_policy not in ("fresh", "warm"):
        raise ValueError(f"unknown init_policy {init_policy!r}")
    opt_cfg = opt_cfg or OptimizerConfig()
    warm = None
    if init_policy == "warm":
        if map_params is not None:
            warm = np.asarray(map_params, dtype=np.float64)
        else:
            ev = setup.evaluator()
            fg = lambda x: loss_mod.energy_grad(x, ev, sigmas)
            warm = adam_minimize(fg, setup.init_params(base_seed), opt_cfg).params
    t0 = time.perf_counter()
    results = _run_all(
        setup, "rpinn", sigmas, n_ens, base_seed, opt_cfg, init_policy, warm,
        n_workers,
    )
    info = {
        "base_seed": int(base_seed),
        "init_policy": init_policy,
        "optimizer": asdict(opt_cfg),
        "wall_time_s": time.perf_counter() - t0,
    }
    return _assemble(setup, "rpinn", results, sigmas, base_seed, info)


def deep_ensemble(
    setup,
    weights: loss_mod.LossWeights,
    n_ens,
    base_seed,
    opt_cfg: OptimizerConfig | None = None,
    n_workers=1,
) -> PosteriorEnsemble:
    """Deterministic-loss ensemble; member k initialized with seed base_seed+k."""
    if n_ens < 1:
        raise ValueError("n_ens must be >= 1")
    opt_cfg = opt_cfg or OptimizerConfig()
    t0 = time.perf_counter()
    results = _run_all(
        setup, "de", weights, n_ens, base_seed, opt_cfg, "fresh", None, n_workers
    )
    info = {
        "base_seed": int(base_seed),
        "optimizer": asdict(opt_cfg),
        "wall_time_s": time.perf_counter() - t0,
    }
    return _assemble(setup, "de", results, None, base_seed, info)


def fit_map(setup, weights: loss_mod.LossWeights, seed, opt_cfg=None) -> AdamResult:
    """Single deterministic regularized-loss fit (the MAP estimate)."""
    opt_cfg = opt_cfg or OptimizerConfig()
    ev = setup.evaluator()
    fg = lambda x: loss_mod.pinn_loss_grad(x, ev, weights)
    return adam_minimize(fg, setup.init_params(seed), opt_cfg)


# -- NUTS-HMC ----------------------------------------------------------------


def leapfrog(fg, theta, r, grad, eps):
    """One leapfrog step for H = -logp + r.r/2; fg returns (logp, grad logp)."""
    r1 = r + 0.5 * eps * grad
    theta1 = theta + eps * r1
    logp1, grad1 = fg(theta1)
    r1 = r1 + 0.5 * eps * grad1
    return theta1, r1, logp1, grad1


def leapfrog_trajectory(fg, theta0, r0, eps, n_steps):
    """Integrate n_steps; returns (theta, r, energy_error)."""
    logp, grad = fg(theta0)
    h0 = -logp + 0.5 * float(r0 @ r0)
    theta, r = np.array(theta0, dtype=float), np.array(r0, dtype=float)
    for _ in range(n_steps):
        theta, r, logp, grad = leapfrog(fg, theta, r, grad, eps)
    h1 = -logp + 0.5 * float(r @ r)
    return theta, r, h1 - h0


def _find_reasonable_epsilon(fg, theta, logp, grad, rng):
    eps = 1.0
    r = rng.standard_normal(theta.shape[0])
    joint0 = logp - 0.5 * float(r @ r)
    theta1, r1, logp1, _ = leapfrog(fg, theta, r, grad, eps)
    joint1 = logp1 - 0.5 * float(r1 @ r1)
    while not np.isfinite(joint1):
        eps *= 0.5
        if eps < 1e-12:
            raise ValueError("could not find a finite starting step size")
        theta1, r1, logp1, _ = leapfrog(fg, theta, r, grad, eps)
        joint1 = logp1 - 0.5 * float(r1 @ r1)
    a = 1.0 if joint1 - joint0 > np.log(0.5) else -1.0
    while a * (joint1 - joint0) > -a * np.log(2.0):
        eps *= 2.0**a
        if eps > 1e7 or eps < 1e-12:
            break
        theta1, r1, logp1, _ = leapfrog(fg, theta, r, grad, eps)
        joint1 = logp1 - 0.5 * float(r1 @ r1)
        if not np.isfinite(joint1):
            eps *= 0.5
            break
    return eps


def _build_tree(fg, theta, r, grad, log_u, v, j, eps, joint0, rng):
    """Doubling tree of the trajectory (slice-sampling variant)."""
    if j == 0:
        theta1, r1, logp1, grad1 = leapfrog(fg, theta, r, grad, v * eps)
        joint = logp1 - 0.5 * float(r1 @ r1) if np.isfinite(logp1) else -np.inf
        n1 = 1 if log_u <= joint else 0
        s1 = 1 if joint - log_u > -DELTA_MAX else 0
        alpha = min(1.0, np.exp(min(joint - joint0, 0.0)))
        divergent = s1 == 0
        return (
            theta1, r1, grad1, theta1, r1, grad1,
            theta1, grad1, logp1, n1, s1, alpha, 1, divergent,
        )
    (
        th_m, r_m, g_m, th_p, r_p, g_p,
        th1, g1, lp1, n1, s1, alpha, n_alpha, div,
    ) = _build_tree(fg, theta, r, grad, log_u, v, j - 1, eps, joint0, rng)
    if s1 == 1:
        if v == -1:
            (
                th_m, r_m, g_m, _, _, _,
                th2, g2, lp2, n2, s2, alpha2, n_alpha2, div2,
            ) = _build_tree(fg, th_m, r_m, g_m, log_u, v, j - 1, eps, joint0, rng)
        else:
            (
                _, _, _, th_p, r_p, g_p,
                th2, g2, lp2, n2, s2, alpha2, n_alpha2, div2,
            ) = _build_tree(fg, th_p, r_p, g_p, log_u, v, j - 1, eps, joint0, rng)
        if n2 > 0 and rng.random() < n2 / max(n1 + n2, 1):
            th1, g1, lp1 = th2, g2, lp2
        dth = th_p - th_m
        s1 = s2 * (1 if dth @ r_m >= 0 else 0) * (1 if dth @ r_p >= 0 else 0)
        n1 += n2
        alpha += alpha2
        n_alpha += n_alpha2
        div = div or div2
    return th_m, r_m, g_m, th_p, r_p, g_p, th1, g1, lp1, n1, s1, alpha, n_alpha, div


def _nuts_chain(fg, theta0, cfg: HmcConfig, rng, keep_logp=True):
    theta = np.array(theta0, dtype=np.float64)
    dim = theta.shape[0]
    logp, grad = fg(theta)
    if not np.isfinite(logp):
        raise ValueError("log density not finite at the chain start")
    eps = _find_reasonable_epsilon(fg, theta, logp, grad, rng)
    mu = np.log(10.0 * eps)
    # with no burn-in there is no adaptation; keep the found step size
    log_eps_bar = 0.0 if cfg.burn_in > 0 else float(np.log(eps))
    h_bar = 0.0
    gamma, t0, kappa = 0.05, 10.0, 0.75
    total = cfg.burn_in + cfg.n_samples
    samples = np.empty((cfg.n_samples, dim))
    logps = np.empty(cfg.n_samples)
    n_divergent = 0
    accept_stats = []
    for m in range(1, total + 1):
        r0 = rng.standard_normal(dim)
        joint0 = logp - 0.5 * float(r0 @ r0)
        log_u = joint0 - rng.exponential(1.0)
        th_m = th_p = theta
        r_m = r_p = r0
        g_m = g_p = grad
        j, n, s = 0, 1, 1
        alpha_sum, n_alpha_sum = 0.0, 0
        divergent = False
        while s == 1 and j < cfg.max_tree_depth:
            v = -1 if rng.random() < 0.5 else 1
            if v == -1:
                (
                    th_m, r_m, g_m, _, _, _,
                    th1, g1, lp1, n1, s1, alpha, n_alpha, div,
                ) = _build_tree(fg, th_m, r_m, g_m, log_u, v, j, eps, joint0, rng)
            else:
                (
                    _, _, _, th_p, r_p, g_p,
                    th1, g1, lp1, n1, s1, alpha, n_alpha, div,
                ) = _build_tree(fg, th_p, r_p, g_p, log_u, v, j, eps, joint0, rng)
            if s1 == 1 and rng.random() < min(1.0, n1 / n):
                theta, grad, logp = th1, g1, lp1
            n += n1
            dth = th_p - th_m
            s = s1 * (1 if dth @ r_m >= 0 else 0) * (1 if dth @ r_p >= 0 else 0)
            j += 1
            alpha_sum += alpha
            n_alpha_sum += n_alpha
            divergent = divergent or div
        if divergent:
            n_divergent += 1
        accept = alpha_sum / max(n_alpha_sum, 1)
        if m <= cfg.burn_in:
            w = 1.0 / (m + t0)
            h_bar = (1.0 - w) * h_bar + w * (cfg.target_accept - accept)
            log_eps = mu - np.sqrt(m) / gamma * h_bar
            eta = m**-kappa
            log_eps_bar = eta * log_eps + (1.0 - eta) * log_eps_bar
            eps = float(np.exp(log_eps))
        else:
            eps = float(np.exp(log_eps_bar))
            samples[m - cfg.burn_in - 1] = theta
            logps[m - cfg.burn_in - 1] = logp
            accept_stats.append(accept)
    info = {
        "step_size": eps,
        "n_divergent": n_divergent,
        "divergence_fraction": n_divergent / total,
        "mean_accept": float(np.mean(accept_stats)) if accept_stats else np.nan,
    }
    return samples, logps, info


def nuts_sample(
    log_density_and_grad, inits, cfg: HmcConfig, seed, problem_id="target"
):
    """NUTS chains; returns one PosteriorEnsemble per chain.

    ``inits`` is a list of per-chain start vectors (or one shared vector).
    Chain c uses the RNG stream seeded with (seed, c).
    """
    if isinstance(inits, np.ndarray) and inits.ndim == 1:
        inits = [inits] * cfg.n_chains
    if len(inits) != cfg.n_chains:
        raise ValueError(
            f"{len(inits)} init vectors for {cfg.n_chains} chains"
        )
    chains = []
    for c in range(cfg.n_chains):
        rng = np.random.default_rng([int(seed), c])
        t0 = time.perf_counter()
        samples, logps, info = _nuts_chain(log_density_and_grad, inits[c], cfg, rng)
        info.update(chain=c, seed=int(seed), wall_time_s=time.perf_counter() - t0)
        meta = [
            SampleMeta(i, int(seed), float(-logps[i]), 0, True)
            for i in range(samples.shape[0])
        ]
        chains.append(
            PosteriorEnsemble(
                method="hmc",
                problem_id=problem_id,
                layout_meta={"kind": "flat", "dim": samples.shape[1]},
                samples=samples,
                meta=meta,
                sample_logp=logps,
                info=info,
            )
        )
    return chains


# -- SVGD --------------------------------------------------------------------


def svgd_direction(particles, grads, bandwidth=None):
    """Update direction phi and the bandwidth used.

    phi_i = (1/n) sum_j [k(x_j, x_i) grad_j + grad_{x_j} k(x_j, x_i)] with
    the RBF kernel k(x, y) = exp(-|x-y|^2 / h); h = med^2 / log n unless
    given.  With one particle this reduces to plain gradient ascent.
    """
    P = np.asarray(particles, dtype=np.float64)
    G = np.asarray(grads, dtype=np.float64)
    n = P.shape[0]
    sq = (P * P).sum(axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * P @ P.T, 0.0)
    if bandwidth is None:
        if n > 1:
            med = np.median(np.sqrt(d2[np.triu_indices(n, 1)]))
            h = med**2 / np.log(n)
            if not h > 0:
                h = 1.0
        else:
            h = 1.0
    else:
        h = float(bandwidth)
    K = np.exp(-d2 / h)
    repulsion = 2.0 / h * (K.sum(axis=1)[:, None] * P - K @ P)
    phi = (K @ G + repulsion) / n
    return phi, h


def svgd_sample(
    grad_log_density, init_particles, cfg: SvgdConfig, seed, problem_id="target"
) -> PosteriorEnsemble:
    """Evolve particles for cfg.n_steps; returns the final particle set.

    ``grad_log_density`` maps a (n, dim) particle matrix to its (n, dim)
    gradient matrix.  Updates are synchronous (each step computed from the
    same previous state) and deterministic; the seed is only recorded.
    """
    P = np.array(init_particles, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] < 2:
        raise ValueError("init_particles must be (n >= 2, dim)")
    if P.shape[0] != cfg.n_particles:
        raise ValueError(
            f"{P.shape[0]} particles given, cfg.n_particles={cfg.n_particles}"
        )
    m = np.zeros_like(P)
    v = np.zeros_like(P)
    b1, b2, eps = 0.9, 0.999, 1e-8
    h = np.nan
    t0 = time.perf_counter()
    for t in range(1, cfg.n_steps + 1):
        G = np.asarray(grad_log_density(P), dtype=np.float64)
        phi, h = svgd_direction(P, G)
        if not np.all(np.isfinite(phi)):
            raise NonFiniteLossError(
                f"non-finite SVGD update at step {t}", P.copy(), t
            )
        m = b1 * m + (1.0 - b1) * phi
        v = b2 * v + (1.0 - b2) * phi * phi
        mhat = m / (1.0 - b1**t)
        vhat = v / (1.0 - b2**t)
        P += cfg.learning_rate * mhat / (np.sqrt(vhat) + eps)
    meta = [
        SampleMeta(i, int(seed), np.nan, cfg.n_steps, True)
        for i in range(P.shape[0])
    ]
    info = {
        "bandwidth": float(h),
        "seed": int(seed),
        "wall_time_s": time.perf_counter() - t0,
    }
    return PosteriorEnsemble(
        method="svgd",
        problem_id=problem_id,
        layout_meta={"kind": "flat", "dim": P.shape[1]},
        samples=P,
        meta=meta,
        info=info,
    )


def batch_grad(grad_fn):
    """Vectorize a per-vector gradient function for SVGD."""

    def fn(P):
        return np.stack([np.asarray(grad_fn(p)) for p in P])

    return fn
