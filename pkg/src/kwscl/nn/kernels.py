"""Hot kernels: depthwise convolution and channel layer norm.

Two interchangeable implementations of each: numba-compiled loops and pure
numpy.  Set ``KWSCL_DISABLE_NUMBA=1`` to force numpy (or
when numba is not importable).  Layout is NHWC, kernels are ``(kh, kw, C)``,
padding is TF-style "SAME".
"""

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

USE_NUMBA = numba is not None and os.environ.get("KWSCL_DISABLE_NUMBA", "").lower() not in (
    "1", "true", "yes")
BACKEND = "numba" if USE_NUMBA else "numpy"
# reassociation for vectorisation, but keep NaN/inf semantics so bad losses still surface
_FASTMATH = {"reassoc", "contract", "nsz", "arcp"}


def same_padding(size: int, k: int, stride: int):
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return out, total // 2, total - total // 2


def _geometry(x_shape, k_shape, stride):
    _, h, w, _ = x_shape
    kh, kw, _ = k_shape
    ho, pt, pb = same_padding(h, kh, stride)
    wo, pl, pr = same_padding(w, kw, stride)
    return ho, wo, pt, pb, pl, pr


# -- numpy -----------------------------------------------------------------

def np_depthwise_forward(x, k, stride):
    ho, wo, pt, pb, pl, pr = _geometry(x.shape, k.shape, stride)
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    y = np.zeros((x.shape[0], ho, wo, x.shape[3]), dtype=np.result_type(x, k))
    for i in range(k.shape[0]):
        for j in range(k.shape[1]):
            y += xp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] * k[i, j]
    return y


def np_depthwise_backward(x, k, dy, stride, need_dx=True, need_dk=True):
    ho, wo, pt, pb, pl, pr = _geometry(x.shape, k.shape, stride)
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    dxp = np.zeros_like(xp) if need_dx else None
    dk = np.zeros_like(k) if need_dk else None
    for i in range(k.shape[0]):
        for j in range(k.shape[1]):
            sl = (slice(None), slice(i, i + stride * ho, stride),
                  slice(j, j + stride * wo, stride), slice(None))
            if need_dx:
                dxp[sl] += dy * k[i, j]
            if need_dk:
                dk[i, j] = np.sum(dy * xp[sl], axis=(0, 1, 2))
    dx = None
    if need_dx:
        h, w = x.shape[1], x.shape[2]
        dx = dxp[:, pt:pt + h, pl:pl + w, :]
    return dx, dk


def np_layer_norm_forward(x, gain, bias, eps):
    """Returns ``(y, xhat, inv)`` with statistics over the last axis."""
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    return xhat * gain + bias, xhat, inv


def np_layer_norm_backward(g, xhat, inv, gain):
    """Returns ``(dx, dgain, dbias)``."""
    red = tuple(range(g.ndim - 1))
    gh = g * gain
    dx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
    return dx, (g * xhat).sum(axis=red), g.sum(axis=red)


# -- numba -----------------------------------------------------------------

if numba is not None:
    @numba.njit(cache=True, fastmath=_FASTMATH)
    def _nb_forward(x, k, stride, ho, wo, pt, pl):
        b, h, w, c = x.shape
        kh, kw, _ = k.shape
        y = np.zeros((b, ho, wo, c), dtype=x.dtype)
        for n in range(b):
            for oi in range(ho):
                for oj in range(wo):
                    for i in range(kh):
                        ii = oi * stride + i - pt
                        if ii < 0 or ii >= h:
                            continue
                        for j in range(kw):
                            jj = oj * stride + j - pl
                            if jj < 0 or jj >= w:
                                continue
                            for ch in range(c):
                                y[n, oi, oj, ch] += x[n, ii, jj, ch] * k[i, j, ch]
        return y

    @numba.njit(cache=True, fastmath=_FASTMATH)
    def _nb_backward(x, k, dy, stride, pt, pl, need_dx, need_dk):
        b, h, w, c = x.shape
        kh, kw, _ = k.shape
        _, ho, wo, _ = dy.shape
        dx = np.zeros(x.shape if need_dx else (0, 0, 0, 0), dtype=x.dtype)
        dk = np.zeros(k.shape if need_dk else (0, 0, 0), dtype=x.dtype)
        for n in range(b):
            for oi in range(ho):
                for oj in range(wo):
                    for i in range(kh):
                        ii = oi * stride + i - pt
                        if ii < 0 or ii >= h:
                            continue
                        for j in range(kw):
                            jj = oj * stride + j - pl
                            if jj < 0 or jj >= w:
                                continue
                            for ch in range(c):
                                g = dy[n, oi, oj, ch]
                                if need_dx:
                                    dx[n, ii, jj, ch] += g * k[i, j, ch]
                                if need_dk:
                                    dk[i, j, ch] += g * x[n, ii, jj, ch]
        return dx, dk


    @numba.njit(cache=True, fastmath=_FASTMATH)
    def _nb_ln_forward(x, gain, bias, eps):
        m, c = x.shape
        y = np.empty_like(x)
        xhat = np.empty_like(x)
        inv = np.empty((m, 1), dtype=x.dtype)
        for r in range(m):
            mu = 0.0
            for ch in range(c):
                mu += x[r, ch]
            mu /= c
            var = 0.0
            for ch in range(c):
                d = x[r, ch] - mu
                var += d * d
            s = 1.0 / np.sqrt(var / c + eps)
            inv[r, 0] = s
            for ch in range(c):
                h = (x[r, ch] - mu) * s
                xhat[r, ch] = h
                y[r, ch] = h * gain[ch] + bias[ch]
        return y, xhat, inv

    @numba.njit(cache=True, fastmath=_FASTMATH)
    def _nb_ln_backward(g, xhat, inv, gain):
        m, c = g.shape
        dx = np.empty_like(g)
        dgain = np.zeros(c, dtype=np.float64)
        dbias = np.zeros(c, dtype=np.float64)
        for r in range(m):
            a = 0.0
            b = 0.0
            for ch in range(c):
                gh = g[r, ch] * gain[ch]
                a += gh
                b += gh * xhat[r, ch]
                dgain[ch] += g[r, ch] * xhat[r, ch]
                dbias[ch] += g[r, ch]
            a /= c
            b /= c
            for ch in range(c):
                dx[r, ch] = inv[r, 0] * (g[r, ch] * gain[ch] - a - xhat[r, ch] * b)
        return dx, dgain, dbias


def nb_layer_norm_forward(x, gain, bias, eps):
    shape = x.shape
    dtype = np.result_type(x, gain)
    y, xhat, inv = _nb_ln_forward(np.ascontiguousarray(x, dtype=dtype).reshape(-1, shape[-1]),
                                  np.ascontiguousarray(gain, dtype=dtype),
                                  np.ascontiguousarray(bias, dtype=dtype), eps)
    return y.reshape(shape), xhat.reshape(shape), inv.reshape(shape[:-1] + (1,))


def nb_layer_norm_backward(g, xhat, inv, gain):
    shape = g.shape
    dtype = np.result_type(g, gain)
    dx, dgain, dbias = _nb_ln_backward(
        np.ascontiguousarray(g, dtype=dtype).reshape(-1, shape[-1]),
        np.ascontiguousarray(xhat, dtype=dtype).reshape(-1, shape[-1]),
        np.ascontiguousarray(inv, dtype=dtype).reshape(-1, 1),
        np.ascontiguousarray(gain, dtype=dtype))
    return dx.reshape(shape), dgain.astype(dtype), dbias.astype(dtype)


def nb_depthwise_forward(x, k, stride):
    ho, wo, pt, _, pl, _ = _geometry(x.shape, k.shape, stride)
    dtype = np.result_type(x, k)
    return _nb_forward(np.ascontiguousarray(x, dtype=dtype), np.ascontiguousarray(k, dtype=dtype),
                       stride, ho, wo, pt, pl)


def nb_depthwise_backward(x, k, dy, stride, need_dx=True, need_dk=True):
    _, _, pt, _, pl, _ = _geometry(x.shape, k.shape, stride)
    dtype = np.result_type(x, k)
    dx, dk = _nb_backward(np.ascontiguousarray(x, dtype=dtype), np.ascontiguousarray(k, dtype=dtype),
                          np.ascontiguousarray(dy, dtype=dtype), stride, pt, pl, need_dx, need_dk)
    return (dx if need_dx else None), (dk if need_dk else None)


if USE_NUMBA:
    depthwise_forward = nb_depthwise_forward
    depthwise_backward = nb_depthwise_backward
    layer_norm_forward = nb_layer_norm_forward
    layer_norm_backward = nb_layer_norm_backward
else:
    depthwise_forward = np_depthwise_forward
    depthwise_backward = np_depthwise_backward
    layer_norm_forward = np_layer_norm_forward
    layer_norm_backward = np_layer_norm_backward
