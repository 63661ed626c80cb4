"""Time the numba and numpy hot kernels on trunk-sized inputs.

Usage: python benchmarks/bench_kernels.py [--repeats N]

Both backends are imported from the same module, so one process measures
both.  Outputs are cross-checked before timing.
"""

import argparse
import timeit

import numpy as np

from kwscl.nn import kernels as K

# shapes seen by the first two separable blocks for a batch of 64 clips
CASES = [
    ("depthwise s1 64x49x20x64", (64, 49, 20, 64), 1),
    ("depthwise s2 64x98x40x64", (64, 98, 40, 64), 2),
]
LN_SHAPE = (64, 49, 20, 128)


def bench(fn, repeats):
    fn()  # warm-up, includes numba compilation
    return min(timeit.repeat(fn, number=1, repeat=repeats)) * 1e3


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    if K.numba is None:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)
    rows = []
    for name, shape, stride in CASES:
        x = rng.standard_normal(shape).astype(np.float32)
        k = rng.standard_normal((3, 3, shape[-1])).astype(np.float32)
        y_np = K.np_depthwise_forward(x, k, stride)
        dy = rng.standard_normal(y_np.shape).astype(np.float32)
        assert np.allclose(K.nb_depthwise_forward(x, k, stride), y_np, atol=1e-4)
        rows.append((name + " fwd",
                     bench(lambda: K.np_depthwise_forward(x, k, stride), args.repeats),
                     bench(lambda: K.nb_depthwise_forward(x, k, stride), args.repeats)))
        rows.append((name + " bwd",
                     bench(lambda: K.np_depthwise_backward(x, k, dy, stride), args.repeats),
                     bench(lambda: K.nb_depthwise_backward(x, k, dy, stride), args.repeats)))
    x = rng.standard_normal(LN_SHAPE).astype(np.float32)
    gain = rng.standard_normal(LN_SHAPE[-1]).astype(np.float32)
    bias = rng.standard_normal(LN_SHAPE[-1]).astype(np.float32)
    out_np = K.np_layer_norm_forward(x, gain, bias, 1e-3)
    out_nb = K.nb_layer_norm_forward(x, gain, bias, 1e-3)
    assert np.allclose(out_nb[0], out_np[0], atol=1e-4)
    g = rng.standard_normal(LN_SHAPE).astype(np.float32)
    rows.append(("layer norm 64x49x20x128 fwd",
                 bench(lambda: K.np_layer_norm_forward(x, gain, bias, 1e-3), args.repeats),
                 bench(lambda: K.nb_layer_norm_forward(x, gain, bias, 1e-3), args.repeats)))
    rows.append(("layer norm 64x49x20x128 bwd",
                 bench(lambda: K.np_layer_norm_backward(g, *out_np[1:], gain), args.repeats),
                 bench(lambda: K.nb_layer_norm_backward(g, *out_nb[1:], gain), args.repeats)))
    print(f"{'kernel':34s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, t_np, t_nb in rows:
        print(f"{name:34s} {t_np:10.2f} {t_nb:10.2f} {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
