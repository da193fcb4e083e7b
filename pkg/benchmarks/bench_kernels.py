"""Compare the compiled and pure-numpy kernel backends.

Times the patch-extraction kernels on their own and a full denoiser training
step with each backend swapped in. Usage::

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]
"""
import argparse
import json
import timeit
from contextlib import contextmanager

import numpy as np

from jointdiff import _kernels_py, kernels
from jointdiff.denoiser import Denoiser
from jointdiff.diffusion_train import train_loss
from jointdiff.numerics import Rng
from jointdiff.schedule import make_linear

try:
    from jointdiff import _kernels as _compiled
except ImportError:
    _compiled = None


@contextmanager
def backend(impl):
    saved = kernels.im2col3x3, kernels.col2im3x3
    kernels.im2col3x3, kernels.col2im3x3 = impl.im2col3x3, impl.col2im3x3
    try:
        yield
    finally:
        kernels.im2col3x3, kernels.col2im3x3 = saved


def best_of(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def kernel_cases(impl, repeat):
    out = {}
    for c, size in ((16, 32), (32, 16), (6, 32)):
        x = np.random.default_rng(0).standard_normal((c, size, size)).astype(np.float32)
        cols = np.empty((c * 9, size * size), np.float32)
        out[f"im2col c={c} {size}x{size}"] = best_of(lambda: impl.im2col3x3(x, cols), repeat, 200)
        out[f"col2im c={c} {size}x{size}"] = best_of(lambda: impl.col2im3x3(cols, (c, size, size)), repeat, 200)
    return out


def train_step_case(impl, repeat, width=16, batch=16, size=32, classes=5):
    model = Denoiser.create(classes, Rng(0), width=width)
    r = Rng(1)
    x0 = np.clip(r.normal((batch, 1, size, size)) * 0.5, -1, 1).astype(np.float32)
    oh = np.eye(classes, dtype=np.float32)[r.integers(0, classes, (batch, size, size))].transpose(0, 3, 1, 2)
    sched = make_linear(200)
    t = r.integers(1, 201, batch)
    with backend(impl):
        return best_of(lambda: train_loss(model, x0, oh, t, Rng(2), sched, 0.6, return_grads=True), repeat, 1)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--json")
    args = p.parse_args(argv)

    impls = {"python": _kernels_py}
    if _compiled is not None:
        impls["compiled"] = _compiled
    results = {}
    for name, impl in impls.items():
        res = kernel_cases(impl, args.repeat)
        res["denoiser train step W=16 batch 16 32x32"] = train_step_case(impl, args.repeat)
        results[name] = res

    print(f"{'case':45s}" + "".join(f"{n:>14s}" for n in impls) + ("    speedup" if len(impls) > 1 else ""))
    for case in results["python"]:
        row = f"{case:45s}" + "".join(f"{results[n][case] * 1e3:12.3f}ms" for n in impls)
        if "compiled" in results:
            row += f"{results['python'][case] / results['compiled'][case]:10.2f}x"
        print(row)
    if _compiled is None:
        print("compiled extension not built; only the numpy backend was timed")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=1)


if __name__ == "__main__":
    main()
