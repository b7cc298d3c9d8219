"""Command-line front end.

Subcommands: generate-data, map, sample, compare, diagnose, table.
Machine-readable results go to files under the configured output
directory; progress lines go to standard error.  Exit codes: 0 success,
2 configuration error, 3 numerical failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from . import io as eio
from . import loss as loss_mod
from . import mlp, stats
from .problems import (
    PROBLEMS,
    Diffusion2D,
    GridField,
    NumericError,
    ProblemSetup,
    field_predictor,
)
from .samplers import (
    NonFiniteLossError,
    SamplingError,
    batch_grad,
    deep_ensemble,
    fit_map,
    nuts_sample,
    rpinn_sample,
    svgd_sample,
)

log = logging.getLogger("pinnuq")

_METHOD_SEED_OFFSET = {"rpinn": 0, "de": 100000, "hmc": 200000, "svgd": 300000}


class _Paths:
    def __init__(self, out_dir):
        self.out = out_dir
        self.data = os.path.join(out_dir, "data")
        self.ensembles = os.path.join(out_dir, "ensembles")
        self.diagnostics = os.path.join(out_dir, "diagnostics")
        self.map_dir = os.path.join(out_dir, "map")
        self.dataset = os.path.join(self.data, "dataset.txt")
        self.y_ref = os.path.join(self.data, "y_ref.csv")
        self.h_ref = os.path.join(self.data, "h_ref.csv")
        self.summary = os.path.join(out_dir, "summary.csv")
        self.timings = os.path.join(out_dir, "timings.csv")


def _build_problem(cfg):
    if cfg.problem == "diffusion_2d":
        return Diffusion2D(nx=cfg.fd_grid[0], ny=cfg.fd_grid[1])
    return PROBLEMS[cfg.problem]()


def _generate_data(cfg, paths):
    problem = _build_problem(cfg)
    os.makedirs(paths.data, exist_ok=True)
    if isinstance(problem, Diffusion2D):
        log.info("sampling log-diffusivity field and FD reference solution")
        y_field, h_field = problem.make_reference(cfg.seeds["data"])
        y_field.save_csv(paths.y_ref)
        h_field.save_csv(paths.h_ref)
        c = cfg.counts
        dataset = problem.make_dataset(
            cfg.sigma,
            cfg.seeds["data"],
            y_field,
            h_field,
            n_y=c["n_y"],
            n_r=c["n_r"],
            n_dbr=c["n_dbr"],
            n_nbl=c["n_nbl"],
            n_nbt=c["n_nbt"],
            n_nbb=c["n_nbb"],
        )
    else:
        dataset = problem.make_dataset(
            cfg.counts["n_f"], cfg.sigma, cfg.seeds["data"]
        )
    eio.save_dataset(dataset, paths.dataset)
    log.info("dataset written to %s", paths.dataset)
    return problem, dataset


def _ensure_data(cfg, paths):
    if os.path.exists(paths.dataset):
        return _build_problem(cfg), eio.load_dataset(paths.dataset)
    log.info("no dataset found, generating")
    return _generate_data(cfg, paths)


def _setup(cfg, problem, dataset):
    return ProblemSetup(problem, dataset, eio.network_specs(cfg))


def _references(cfg, problem, paths):
    """(eval points, {field: reference values})."""
    if isinstance(problem, Diffusion2D):
        y_ref = GridField.load_csv(paths.y_ref)
        h_ref = GridField.load_csv(paths.h_ref)
        return problem.eval_points(), {"y": y_ref.flat(), "h": h_ref.flat()}
    pts = problem.eval_points(cfg.eval_points_1d)
    u_ref, f_ref = problem.reference(pts[:, 0])
    return pts, {"u": u_ref, "f": f_ref}


def _method_seed(cfg, method):
    return cfg.seeds["sampler"] + _METHOD_SEED_OFFSET[method]


def _run_method(cfg, setup, method, n_workers):
    """Run one sampler; returns (list of ensembles, wall seconds)."""
    seed = _method_seed(cfg, method)
    sigmas = eio.config_sigmas(cfg)
    weights = loss_mod.LossWeights(cfg.weights)
    t0 = time.perf_counter()
    if method == "rpinn":
        ens = [
            rpinn_sample(
                setup, sigmas, cfg.n_ens, seed, cfg.optimizer,
                init_policy=cfg.init_policy, n_workers=n_workers,
            )
        ]
    elif method == "de":
        ens = [
            deep_ensemble(
                setup, weights, cfg.n_ens, seed, cfg.optimizer,
                n_workers=n_workers,
            )
        ]
    elif method == "hmc":
        ev = setup.evaluator()

        def fg(theta):
            e, g = loss_mod.energy_grad(theta, ev, sigmas)
            return -e, -g

        inits = [
            setup.init_params(seed + c) for c in range(cfg.hmc.n_chains)
        ]
        ens = nuts_sample(fg, inits, cfg.hmc, seed, problem_id=cfg.problem)
    elif method == "svgd":
        ev = setup.evaluator()

        def grad_one(theta):
            return -loss_mod.energy_grad(theta, ev, sigmas)[1]

        particles = np.stack(
            [setup.init_params(seed + i) for i in range(cfg.svgd.n_particles)]
        )
        ens = [
            svgd_sample(
                batch_grad(grad_one), particles, cfg.svgd, seed,
                problem_id=cfg.problem,
            )
        ]
    else:
        raise eio.ConfigError(f"unknown method {method!r}")
    return ens, time.perf_counter() - t0


def _save_method_ensembles(ensembles, method, paths):
    base = os.path.join(paths.ensembles, method)
    if method == "hmc":
        for c, ens in enumerate(ensembles):
            eio.save_ensemble(ens, os.path.join(base, f"chain_{c:02d}"))
    else:
        eio.save_ensemble(ensembles[0], base)
    log.info("%s ensemble saved under %s", method, base)


def _pooled_samples(ensembles):
    return np.concatenate([e.samples for e in ensembles], axis=0)


def cmd_generate_data(cfg, args, paths):
    _generate_data(cfg, paths)
    return 0


def cmd_map(cfg, args, paths):
    problem, dataset = _ensure_data(cfg, paths)
    setup = _setup(cfg, problem, dataset)
    weights = loss_mod.LossWeights(cfg.weights)
    log.info("fitting MAP (deterministic regularized loss)")
    res = fit_map(setup, weights, cfg.seeds["sampler"], cfg.optimizer)
    os.makedirs(paths.map_dir, exist_ok=True)
    pv = mlp.ParameterVector(res.params, setup.layout)
    mlp.save_parameter_vector(os.path.join(paths.map_dir, "map.pv"), pv)
    pts, refs = _references(cfg, problem, paths)
    report = {"final_loss": res.value, "iterations": res.iterations}
    for fname, ref in refs.items():
        pred = field_predictor(setup, fname, pts)(res.params)
        rl2, linf = stats.rel_errors(pred, ref)
        report[f"rl2_{fname}"] = rl2
        report[f"linf_{fname}"] = linf
        log.info("MAP %s: rl2=%.3e linf=%.3e", fname, rl2, linf)
    with open(os.path.join(paths.map_dir, "map.json"), "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
    return 0


def cmd_sample(cfg, args, paths):
    problem, dataset = _ensure_data(cfg, paths)
    setup = _setup(cfg, problem, dataset)
    method = args.method
    log.info("sampling with method %s (n_ens=%d)", method, cfg.n_ens)
    ensembles, wall = _run_method(cfg, setup, method, args.parallel)
    _save_method_ensembles(ensembles, method, paths)
    log.info("%s finished in %.1f s", method, wall)
    return 0


def cmd_compare(cfg, args, paths):
    problem, dataset = _ensure_data(cfg, paths)
    setup = _setup(cfg, problem, dataset)
    pts, refs = _references(cfg, problem, paths)
    rows, timing_rows = [], []
    for method in cfg.methods:
        log.info("compare: running %s", method)
        ensembles, wall = _run_method(cfg, setup, method, args.parallel)
        _save_method_ensembles(ensembles, method, paths)
        pooled = _pooled_samples(ensembles)
        for fname, ref in refs.items():
            pred = stats.predictive_moments(
                pooled, field_predictor(setup, fname, pts), pts
            )
            rl2, linf = stats.rel_errors(pred.mean, ref)
            rows.append(
                stats.SummaryRow(
                    method=method,
                    field_name=fname,
                    rl2=rl2,
                    linf=linf,
                    avg_std=float(pred.std.mean()),
                    lpp=stats.lpp(pred, ref),
                    coverage=stats.coverage(pred, ref),
                    wall_time_s=None,  # kept out of summary.csv (bitwise reruns)
                )
            )
        timing_rows.append((method, wall))
    eio.write_summary(rows, paths.summary)
    with open(paths.timings, "w") as f:
        f.write("method,time_s\n")
        for method, wall in timing_rows:
            f.write(f"{method},{wall:.3f}\n")
    log.info("summary written to %s", paths.summary)
    return 0


def _load_chains(args, cfg, paths):
    if args.chains:
        return [eio.load_ensemble(d) for d in args.chains]
    base = os.path.join(paths.ensembles, "hmc")
    if os.path.isdir(base):
        subdirs = sorted(
            os.path.join(base, d)
            for d in os.listdir(base)
            if d.startswith("chain_")
        )
        if subdirs:
            log.info("loading %d saved chains from %s", len(subdirs), base)
            return [eio.load_ensemble(d) for d in subdirs]
    log.info("no saved chains; running NUTS")
    problem, dataset = _ensure_data(cfg, paths)
    setup = _setup(cfg, problem, dataset)
    ensembles, _ = _run_method(cfg, setup, "hmc", args.parallel)
    _save_method_ensembles(ensembles, "hmc", paths)
    return ensembles


def cmd_diagnose(cfg, args, paths):
    chains = _load_chains(args, cfg, paths)
    if len(chains) < 2:
        raise eio.ConfigError("diagnose needs at least two chains")
    os.makedirs(paths.diagnostics, exist_ok=True)
    diag = stats.chain_diagnostics(
        [c.samples for c in chains],
        [
            -c.sample_logp if c.sample_logp is not None else np.array([])
            for c in chains
        ],
    )
    rh = diag.rhat
    with open(os.path.join(paths.diagnostics, "rhat.csv"), "w") as f:
        f.write("param_index,rhat\n")
        for i, v in enumerate(rh):
            f.write(f"{i},{float(v)!r}\n")
    finite = rh[np.isfinite(rh)]
    with open(os.path.join(paths.diagnostics, "rhat_hist.csv"), "w") as f:
        f.write("bin_left,bin_right,count\n")
        if finite.size:
            counts, edges = np.histogram(
                finite, bins=min(40, max(10, finite.size // 50 + 10))
            )
            for i, c in enumerate(counts):
                f.write(f"{float(edges[i])!r},{float(edges[i + 1])!r},{c}\n")
    if finite.size:
        log.info(
            "rhat: max=%.4f mean=%.4f", float(np.max(finite)), float(np.mean(finite))
        )

    # traces for the best-mixing (closest to 1) and worst-mixing parameters
    with open(os.path.join(paths.diagnostics, "traces.csv"), "w") as f:
        f.write("chain,iter,param_index,value\n")
        for p, rows in sorted(diag.trace_params.items()):
            for ci in range(rows.shape[0]):
                for it in range(rows.shape[1]):
                    f.write(f"{ci},{it},{p},{float(rows[ci, it])!r}\n")
    with open(os.path.join(paths.diagnostics, "logdensity.csv"), "w") as f:
        f.write("chain,iter,neg_log_density\n")
        for ci, trace in enumerate(diag.neg_logp_traces):
            for it, v in enumerate(trace):
                f.write(f"{ci},{it},{float(v)!r}\n")

    if args.subspace:
        if len(chains) < 3:
            raise eio.ConfigError("--subspace needs at least three chains")
        problem, dataset = _ensure_data(cfg, paths)
        setup = _setup(cfg, problem, dataset)
        ev = setup.evaluator()
        sigmas = eio.config_sigmas(cfg)

        def logp(theta):
            return -loss_mod.energy(theta, ev, sigmas)

        anchors = [c.samples[-1] for c in chains[:3]]
        a = np.linspace(-0.5, 1.5, args.subspace_grid)
        b = np.linspace(-0.5, 1.5, args.subspace_grid)
        grid, basis = stats.subspace_grid(*anchors, a, b, logp)
        with open(os.path.join(paths.diagnostics, "subspace.csv"), "w") as f:
            f.write("a,b,log_density\n")
            for i, av in enumerate(a):
                for j, bv in enumerate(b):
                    f.write(f"{float(av)!r},{float(bv)!r},{float(grid[i, j])!r}\n")
        np.savetxt(
            os.path.join(paths.diagnostics, "subspace_basis.csv"),
            basis,
            delimiter=",",
        )
        log.info("subspace grid written (%dx%d)", len(a), len(b))

    if args.hessian_spectrum:
        problem, dataset = _ensure_data(cfg, paths)
        setup = _setup(cfg, problem, dataset)
        if setup.n_params > args.hessian_max_dim:
            raise eio.ConfigError(
                f"hessian spectrum needs n_params <= {args.hessian_max_dim} "
                f"(got {setup.n_params}); restrict the network or raise "
                "--hessian-max-dim"
            )
        sigmas = eio.config_sigmas(cfg)
        spec_list = setup.specs
        dataset_ = dataset

        def traced_logp(param_objs):
            return -_traced_energy(problem, dataset_, spec_list, sigmas, param_objs)

        eigs = stats.hessian_eigenspectrum(
            lambda p: traced_logp(p),
            chains[0].samples[-1],
            top_k=args.hessian_spectrum,
            max_dim=args.hessian_max_dim,
        )
        with open(os.path.join(paths.diagnostics, "hessian_spectrum.csv"), "w") as f:
            f.write("rank,eigenvalue\n")
            for i, v in enumerate(eigs):
                f.write(f"{i},{float(v)!r}\n")
        log.info("hessian spectrum written (top %d)", len(eigs))
    return 0


def _traced_energy(problem, dataset, specs, sigmas, param_objs):
    """Energy as an autodiff expression (diagnostics only; slow)."""
    from . import autodiff as ad

    terms = []
    if problem.name in ("linear_poisson", "nonlinear_poisson"):
        spec = specs[0]

        def net(x_objs):
            return mlp.forward_generic(spec, param_objs, x_objs)

        for x, fval in zip(dataset.y_obs.points, dataset.y_obs.values):
            xs = [
                ad.DualValue(
                    ad.DualValue(ad.constant(float(c)), 1.0), ad.DualValue(1.0, 0.0)
                )
                for c in x
            ]
            out = ad.DualValue._wrap(net(xs))
            u = out.primal.primal
            uxx = out.tangent.tangent
            if problem.name == "linear_poisson":
                fhat = problem.k * uxx
            else:
                fhat = problem.lam * uxx + problem.k * ad.tanh(u)
            m = fhat - float(fval)
            terms.append(m * m / (2.0 * sigmas["f"] ** 2))
        for x, uval in zip(dataset.u_obs.points, dataset.u_obs.values):
            m = net([ad.constant(float(c)) for c in x]) - float(uval)
            terms.append(m * m / (2.0 * sigmas["b"] ** 2))
    else:
        raise eio.ConfigError(
            "hessian spectrum is implemented for the 1D problems only"
        )
    prior = ad.expr_sum([p * p for p in param_objs])
    return ad.expr_sum(terms) + prior / (2.0 * sigmas.sigma_p**2)


def cmd_table(cfg, args, paths):
    path = args.summary or paths.summary
    rows = eio.read_summary(path)
    headers = ["method", "field", "rl2", "linf", "avg_std", "lpp", "coverage", "time_s"]
    table = [headers]
    for r in rows:
        table.append(
            [
                r.method,
                r.field_name,
                f"{r.rl2:.1e}",
                f"{r.linf:.1e}",
                f"{r.avg_std:.1e}",
                f"{r.lpp:.4g}",
                f"{round(r.coverage * 100)}%",
                "" if r.wall_time_s is None else f"{r.wall_time_s:.1f}",
            ]
        )
    widths = [max(len(row[i]) for row in table) for i in range(len(headers))]
    for row in table:
        print("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="pinnuq",
        description="Posterior sampling and UQ for inverse-PDE network models",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, needs_parallel=True):
        sp.add_argument("--config", required=True, help="config path or preset:<name>")
        sp.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="deep config override (repeatable)",
        )
        sp.add_argument("--out", default=None, help="override output directory")
        if needs_parallel:
            sp.add_argument("--parallel", type=int, default=1, metavar="N")

    sp = sub.add_parser("generate-data", help="write dataset (and 2D reference fields)")
    common(sp, needs_parallel=False)
    sp = sub.add_parser("map", help="single deterministic regularized fit")
    common(sp, needs_parallel=False)
    sp = sub.add_parser("sample", help="draw a posterior ensemble")
    common(sp)
    sp.add_argument("--method", required=True, choices=sorted(_METHOD_SEED_OFFSET))
    sp.add_argument("--n-ens", type=int, default=None, help="override n_ens")
    sp = sub.add_parser("compare", help="run all configured methods, write summary.csv")
    common(sp)
    sp.add_argument("--n-ens", type=int, default=None, help="override n_ens")
    sp = sub.add_parser("diagnose", help="chain diagnostics (R-hat, traces, subspace)")
    common(sp)
    sp.add_argument("--chains", nargs="*", default=None, help="saved chain dirs")
    sp.add_argument("--subspace", action="store_true")
    sp.add_argument("--subspace-grid", type=int, default=21)
    sp.add_argument("--hessian-spectrum", type=int, default=0, metavar="K")
    sp.add_argument("--hessian-max-dim", type=int, default=400)
    sp = sub.add_parser("table", help="pretty-print a summary CSV")
    common(sp, needs_parallel=False)
    sp.add_argument("--summary", default=None, help="summary.csv path")
    return p


_COMMANDS = {
    "generate-data": cmd_generate_data,
    "map": cmd_map,
    "sample": cmd_sample,
    "compare": cmd_compare,
    "diagnose": cmd_diagnose,
    "table": cmd_table,
}


def main(argv=None) -> int:
    logging.basicConfig(
        stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(message)s"
    )
    args = build_parser().parse_args(argv)
    try:
        raw = eio.load_raw_config(args.config)
        eio.apply_overrides(raw, args.overrides)
        if getattr(args, "n_ens", None):
            raw["n_ens"] = args.n_ens
        cfg = eio.validate_config(raw)
        if args.out:
            cfg.output_dir = args.out
        paths = _Paths(cfg.output_dir)
        os.makedirs(paths.out, exist_ok=True)
        return _COMMANDS[args.command](cfg, args, paths)
    except eio.ConfigError as e:
        log.error("configuration error: %s", e)
        return 2
    except (NumericError, SamplingError, NonFiniteLossError, ValueError) as e:
        log.error("numerical failure: %s", e)
        return 3
    except OSError as e:
        log.error("I/O failure: %s", e)
        return 4


if __name__ == "__main__":
    sys.exit(main())
