"""Compare the compiled and numpy unfold/fold kernels on the network's layer geometries.

    python benchmarks/bench_kernels.py [--repeat 5] [--batch 4] [--frames 128]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from cycledcd.nn import functional as fn
from cycledcd.nn import kernels
from cycledcd.nn.tensor import Tensor

# (name, C_in, C_out, F, kernel, stride, dilation)
GEOMETRIES = [
    ("gen.down0", 1, 64, 161, (3, 5), (1, 2), (1, 1)),
    ("gen.down2", 64, 256, 41, (3, 5), (1, 2), (1, 1)),
    ("gen.dra_d8", 128, 128, 21, (3, 5), (1, 1), (8, 1)),
    ("dcd.enc4", 64, 128, 21, (3, 5), (1, 2), (1, 1)),
]


def _time(f, repeat: int) -> float:
    f()  # warm-up
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        f()
        best = min(best, time.perf_counter() - t0)
    return best


def bench(backend: str, batch: int, frames: int, repeat: int, rng) -> dict[str, tuple[float, float]]:
    kernels.use_backend(backend)
    out = {}
    for name, cin, cout, f, k, s, d in GEOMETRIES:
        x = Tensor(rng.standard_normal((batch, cin, frames, f)), requires_grad=True)
        w = Tensor(rng.standard_normal((cout, cin) + k) * 0.05, requires_grad=True)
        pad = ((k[0] - 1) // 2 * d[0], (k[1] - 1) // 2 * d[1])

        def fwd():
            return fn.conv2d(x, w, None, s, pad, d)

        def fwd_bwd():
            fwd().sum().backward()

        out[name] = (_time(fwd, repeat), _time(fwd_bwd, repeat))
    return out


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5, help="timed repetitions; the best is reported")
    ap.add_argument("--batch", type=int, default=4)
    ap.add_argument("--frames", type=int, default=128)
    args = ap.parse_args(argv)
    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled extension not built; only the numpy backend is available")
    results = {b: bench(b, args.batch, args.frames, args.repeat, np.random.default_rng(0)) for b in backends}
    print(f"{'layer':<12} {'backend':<8} {'forward ms':>11} {'fwd+bwd ms':>11}")
    for name, *_ in GEOMETRIES:
        for b in backends:
            fw, fb = results[b][name]
            print(f"{name:<12} {b:<8} {fw * 1e3:>11.2f} {fb * 1e3:>11.2f}")
        if len(backends) == 2:
            py, cy = results["python"][name], results["cython"][name]
            print(f"{'':<12} {'speedup':<8} {py[0] / cy[0]:>10.2f}x {py[1] / cy[1]:>10.2f}x")


if __name__ == "__main__":
    main()
