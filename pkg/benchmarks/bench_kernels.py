"""Compare the compiled and pure-Python kernel backends.

    python3 benchmarks/bench_kernels.py [--sizes 50,100,200,400] [--repeat 20]

Prints one line per (kernel, n) with the median time of each backend, the
speed-up and the largest absolute difference between their outputs.
"""
import argparse
import time

import numpy as np

from mdns import kernels


def _inputs(n, rng):
    xy = rng.uniform(0, 100, size=(n, 2))
    h = np.hypot(*(xy[:, None, :] - xy[None, :, :]).transpose(2, 0, 1))
    tau2 = rng.uniform(0.1, 1.0, n)
    sigma = rng.uniform(0.5, 2.0, n)
    rho = rng.uniform(20.0, 400.0, n)
    resid = rng.standard_normal(n)
    return np.ascontiguousarray(h), tau2, sigma, rho, resid


def _median_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times)), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="50,100,200,400")
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    comp = kernels.compiled_backend
    py = kernels.python_backend
    if comp is None:
        print("compiled backend unavailable; only the Python backend was built")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<16}{'n':>6}{'python ms':>12}{'compiled ms':>13}{'speed-up':>10}{'max |diff|':>12}")
    for n in (int(s) for s in args.sizes.split(",")):
        h, tau2, sigma, rho, resid = _inputs(n, rng)
        cases = {
            "nonstat_cov": lambda b: b.nonstat_cov(h, tau2, sigma, rho, 2.0),
            "day_logpdf": lambda b: b.day_logpdf(h, resid, tau2, sigma, rho, 2.0, 0.0),
        }
        for name, call in cases.items():
            tp, out_p = _median_time(lambda: call(py), args.repeat)
            if comp is None:
                print(f"{name:<16}{n:>6}{tp * 1e3:>12.3f}{'-':>13}{'-':>10}{'-':>12}")
                continue
            tc, out_c = _median_time(lambda: call(comp), args.repeat)
            diff = float(np.max(np.abs(np.asarray(out_p) - np.asarray(out_c))))
            print(f"{name:<16}{n:>6}{tp * 1e3:>12.3f}{tc * 1e3:>13.3f}{tp / tc:>10.2f}{diff:>12.2e}")


if __name__ == "__main__":
    main()
