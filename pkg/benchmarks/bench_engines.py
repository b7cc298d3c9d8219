#!/usr/bin/env python3
"""Throughput comparison of the compiled and numpy kernel engines.

Times a full loss-gradient pass (forward with input derivatives plus
parameter backprop) on the configurations the samplers actually run, and
one end-to-end randomize-then-minimize sample per engine.

Usage: python benchmarks/bench_engines.py [--repeats N]
"""

import argparse
import time

import numpy as np

from pinnuq.kernels import available_engines, make_kernel
from pinnuq.loss import LossWeights, randomized_loss_grad, draw_noise, sigmas_from_weights
from pinnuq.mlp import MlpSpec, init_params
from pinnuq.problems import LinearPoisson, ProblemSetup
from pinnuq.samplers import OptimizerConfig, adam_minimize

CASES = [
    ("1D state net, 34 pts, 2nd derivs", MlpSpec(1, (50, 50)), 34, 2),
    ("1D state net, 101 pts, values", MlpSpec(1, (50, 50)), 101, 0),
    ("2D head net, 500 pts, 2nd derivs", MlpSpec(2, (60, 60, 60, 60)), 500, 2),
    ("2D log-k net, 500 pts, 1st derivs", MlpSpec(2, (60, 60, 60, 60)), 500, 1),
]


def time_case(spec, n_pts, order, engine, repeats):
    rng = np.random.default_rng(0)
    pts = rng.uniform(-1.0, 1.0, (n_pts, spec.input_dim))
    vec = init_params(spec, 1).values
    gv = rng.normal(size=n_pts)
    g1 = rng.normal(size=(n_pts, spec.input_dim)) if order >= 1 else None
    g2 = rng.normal(size=(n_pts, spec.input_dim)) if order >= 2 else None
    kern = make_kernel(spec, pts, order, engine=engine)
    kern.forward(vec)
    kern.backward(gv, g1, g2)
    t0 = time.perf_counter()
    for _ in range(repeats):
        kern.forward(vec)
        kern.backward(gv, g1, g2)
    return (time.perf_counter() - t0) / repeats


def time_sample(engine, iters=2000):
    p = LinearPoisson()
    ds = p.make_dataset(32, 0.1, 40)
    setup = ProblemSetup(p, ds, (MlpSpec(1, (50, 50)),))
    w = LossWeights({"f": 27000.0, "b": 2700.0})
    sig = sigmas_from_weights(
        w, 0.1, {"f": 32, "b": 2}, mode="weighted_additive", data_term="f"
    )
    ev = p.build_evaluator(setup.specs, ds)
    # the evaluator picks the active engine; rebuild its kernels explicitly
    ev._kf = make_kernel(setup.specs[0], ds.y_obs.points, 2, engine=engine)
    ev._kb = make_kernel(setup.specs[0], ds.u_obs.points, 0, engine=engine)
    noise = draw_noise(sig, ev.term_counts(), ev.n_params, seed=7)
    fg = lambda x: randomized_loss_grad(x, ev, sig, noise)
    x0 = setup.init_params(3)
    t0 = time.perf_counter()
    adam_minimize(fg, x0, OptimizerConfig(max_iters=iters, grad_tol=0.0))
    return time.perf_counter() - t0


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=300)
    args = ap.parse_args()
    engines = available_engines()
    print(f"engines available: {', '.join(engines)}\n")
    header = f"{'case':42s}" + "".join(f"{e:>14s}" for e in engines)
    if len(engines) == 2:
        header += f"{'speedup':>10s}"
    print(header)
    print("-" * len(header))
    for name, spec, n_pts, order in CASES:
        times = [time_case(spec, n_pts, order, e, args.repeats) for e in engines]
        row = f"{name:42s}" + "".join(f"{t * 1e6:11.0f} us" for t in times)
        if len(times) == 2:
            row += f"{times[1] / times[0] if engines[0] == 'compiled' else times[0] / times[1]:9.1f}x"
        print(row)
    print()
    for e in engines:
        dt = time_sample(e)
        print(f"one rPINN sample (2000 Adam iterations), {e:8s}: {dt:6.2f} s")


if __name__ == "__main__":
    main()
