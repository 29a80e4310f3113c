"""Compiled vs pure-Python kernel timings.

    python benchmarks/bench_kernels.py [--repeat 5]

Each kernel runs on identical inputs through both backends; the script
prints the median wall time per call, the speed-up and the largest
difference between the two outputs.
"""

import argparse
import statistics
import time

import numpy as np

from bhdimer import _fallback
from bhdimer.model import ModelParams
from bhdimer.propagate import _make_leg

try:
    from bhdimer import _kernels
except ImportError:
    _kernels = None


def _time(fn, repeat):
    out, times = None, []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times), out


def cf4_case(N, width, nsteps=200):
    p = ModelParams(N, -3.0)
    dt, d0, slope = 0.05, -1.0, 4e-4
    leg = _make_leg(p, d0, d0 + slope * nsteps * dt)
    rng = np.random.default_rng(0)
    psi0 = rng.normal(size=(p.dim, width)) + 1j * rng.normal(size=(p.dim, width))
    psi0 /= np.linalg.norm(psi0, axis=0)
    w = leg.weights(dt)

    def run(mod):
        def go():
            psi = np.ascontiguousarray(psi0.copy())
            mod.cf4_steps(psi, leg.diag0, leg.pdiag, leg.offd, d0, slope, dt, nsteps,
                          leg.center, leg.radius, w)
            return psi
        return go
    return f"cf4_steps N={N} cols={width} x{nsteps}", run


def rk4_case(samples, nsteps=2000):
    rng = np.random.default_rng(1)
    z = rng.uniform(-0.9, 0.9, samples)
    q = rng.uniform(-np.pi, np.pi, samples)
    a1 = np.sqrt((1 + z) / 2) * np.exp(-0.5j * q)
    a2 = np.sqrt((1 - z) / 2) * np.exp(0.5j * q)

    def run(mod):
        def go():
            x, y = a1.copy(), a2.copy()
            mod.rk4_mean_field(x, y, -3.0, 1.0, -2.0, 1e-3, 0.01, nsteps)
            return np.concatenate([x, y])
        return go
    return f"rk4_mean_field samples={samples} x{nsteps}", run


def cascade_case(levels, crossings):
    rng = np.random.default_rng(2)
    lower = rng.integers(0, levels - 1, crossings).astype(np.int_)
    P = rng.random(crossings)
    p0 = np.zeros(levels)
    p0[0] = 1.0

    def run(mod):
        def go():
            p = p0.copy()
            mod.cascade(p, lower, P)
            return p
        return go
    return f"cascade levels={levels} crossings={crossings}", run


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; run `python setup.py build_ext --inplace`")
        return 1
    cases = [cf4_case(100, 1), cf4_case(1000, 1), cf4_case(300, 20),
             rk4_case(400), cascade_case(1001, 55000)]
    print(f"{'kernel':44s} {'compiled':>11s} {'python':>11s} {'speed-up':>9s} {'max diff':>9s}")
    for name, run in cases:
        tc, oc = _time(run(_kernels), args.repeat)
        tp, op = _time(run(_fallback), args.repeat)
        diff = float(np.max(np.abs(np.asarray(oc) - np.asarray(op))))
        print(f"{name:44s} {tc * 1e3:9.2f}ms {tp * 1e3:9.2f}ms {tp / tc:8.1f}x {diff:9.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
