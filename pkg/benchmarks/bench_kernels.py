"""Compare the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20]
"""

import argparse
import timeit

import numpy as np

from vaefqa import _kernels_py, kernels


def cases(rng):
    x = rng.random((64, 8, 32, 32))
    cols = _kernels_py.im2col(x, 4, 2, 1)
    c, h, w = 8, 32, 32
    X = rng.random((10, 1024))
    mu = rng.random((10, 1024))
    lv = rng.normal(-3, 1, (10, 1024))
    img = rng.random((180, 320))
    return {
        "im2col 64x8x32x32 k4 s2": lambda m: m.im2col(x, 4, 2, 1),
        "col2im 64x8x32x32 k4 s2": lambda m: m.col2im(cols, c, h, w, 4, 2, 1),
        "gaussian_logpdf_rows 10x1024": lambda m: m.gaussian_logpdf_rows(X, mu, lv),
        "log_rp L=10 d=1024": lambda m: m.log_rp(X[0], mu, lv),
        "bilinear 180x320 -> 64x64": lambda m: m.bilinear_resize(img, 64, 64),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    compiled = kernels.compiled_module()
    if compiled is None:
        print("compiled extension not built; run `python3 setup.py build_ext --inplace`")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':32s} {'numpy ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for name, fn in cases(rng).items():
        t_py = min(timeit.repeat(lambda: fn(_kernels_py), number=1, repeat=args.repeat)) * 1e3
        t_cy = min(timeit.repeat(lambda: fn(compiled), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:32s} {t_py:10.3f} {t_cy:10.3f} {t_py / t_cy:7.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
