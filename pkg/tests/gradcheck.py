"""Central finite-difference checks shared by the nn and acceptance tests."""

import numpy as np

from kwscl.nn import autodiff as ad
from kwscl.nn.autodiff import Tensor
from kwscl.nn.model import Model, TrunkConfig

H = 1e-6
TOL = 1e-4

TOY_TRUNK = TrunkConfig(input_shape=(12, 10), channels=(3, 4, 4, 5, 5, 6), dense_hidden=8)


ZERO_ABS_TOL = 1e-8


def rel_error(a, b):
    """Norm-wise relative error; an exactly zero analytic gradient is compared absolutely.

    The absolute branch covers e.g. the embedding bias, which cancels in l - r
    and whose numerical gradient is pure round-off (~1e-10).
    """
    a, b = np.ravel(a), np.ravel(b)
    if not np.any(a):
        return 0.0 if np.max(np.abs(b), initial=0.0) < ZERO_ABS_TOL else float("inf")
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b)))


def check(loss_fn, arrays, h=H):
    """Worst relative error between backprop and central differences over ``arrays``.

    ``loss_fn(*tensors)`` must return a scalar Tensor.
    """
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss_fn(*tensors).backward()
    worst = 0.0
    for t, a in zip(tensors, arrays):
        num = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            orig = t.data[idx]
            t.data[idx] = orig + h
            up = float(loss_fn(*[Tensor(x.data) for x in tensors]).data)
            t.data[idx] = orig - h
            down = float(loss_fn(*[Tensor(x.data) for x in tensors]).data)
            t.data[idx] = orig
            num[idx] = (up - down) / (2 * h)
        worst = max(worst, rel_error(t.grad, num))
    return worst


def _weighted(out, seed=0):
    w = np.random.default_rng(seed).standard_normal(out.shape)
    return ad.mean(ad.mul(out, w))


def layer_cases():
    """(name, loss_fn, input arrays) for every differentiable op, in float64."""
    rng = np.random.default_rng(7)
    r = rng.standard_normal
    pos = np.array([1.0, 0.0, 1.0, 0.0])
    return [
        ("add", lambda a, b: _weighted(ad.add(a, b)), [r((3, 4)), r((4,))]),
        ("mul", lambda a, b: _weighted(ad.mul(a, b)), [r((3, 4)), r((3, 1))]),
        ("matmul", lambda a, b: _weighted(ad.matmul(a, b)), [r((3, 4)), r((4, 2))]),
        ("dense", lambda x, w, b: _weighted(ad.dense(x, w, b)), [r((3, 4)), r((4, 5)), r((5,))]),
        ("relu", lambda x: _weighted(ad.relu(x)), [r((4, 5)) + 0.05]),
        ("flatten", lambda x: _weighted(ad.flatten(x)), [r((2, 3, 4))]),
        ("rows", lambda x: _weighted(ad.rows(x, 1, 3)), [r((4, 3))]),
        ("exp", lambda x: _weighted(ad.exp(x)), [r((3, 3))]),
        ("depthwise_conv2d/s1", lambda x, k: _weighted(ad.depthwise_conv2d(x, k, 1)),
         [r((2, 5, 4, 3)), r((3, 3, 3))]),
        ("depthwise_conv2d/s2", lambda x, k: _weighted(ad.depthwise_conv2d(x, k, 2)),
         [r((2, 5, 4, 3)), r((3, 3, 3))]),
        ("pointwise_conv2d", lambda x, w, b: _weighted(ad.pointwise_conv2d(x, w, b)),
         [r((2, 3, 3, 2)), r((2, 4)), r((4,))]),
        ("separable_conv2d", lambda x, d, p, b: _weighted(ad.separable_conv2d(x, d, p, b, stride=2)),
         [r((2, 6, 5, 2)), r((3, 3, 2)), r((2, 3)), r((3,))]),
        ("layer_norm", lambda x, g, b: _weighted(ad.layer_norm(x, g, b)),
         [r((2, 3, 2, 5)), 1 + 0.1 * r((5,)), r((5,))]),
        ("shortcut", lambda x: _weighted(ad.shortcut(x, 2, 5)), [r((2, 5, 4, 3))]),
        ("manhattan", lambda a, b: _weighted(ad.manhattan(a, b)), [r((3, 6)), r((3, 6))]),
        ("siamese_distance", lambda a, b: _weighted(ad.siamese_distance(a, b)),
         [0.2 * r((4, 6)), 0.2 * r((4, 6))]),
        ("contrastive_bce", lambda a, b: ad.contrastive_bce(ad.siamese_distance(a, b), pos),
         [0.2 * r((4, 6)), 0.2 * r((4, 6))]),
        ("siamese_bce", lambda a, b: ad.siamese_bce(a, b, pos), [0.2 * r((4, 6)), 0.2 * r((4, 6))]),
        ("softmax_cross_entropy", lambda z: ad.softmax_cross_entropy(z, [0, 2, 1]), [r((3, 4))]),
    ]


def toy_model(seed=0, num_classes=None):
    model = Model.init(TOY_TRUNK, seed, num_classes=num_classes, dtype=np.float64)
    rng = np.random.default_rng(seed + 100)
    model.adapt(rng.standard_normal((6, 12, 10)) * 3 + 1)
    if num_classes is not None:
        model.adapt_head(rng.standard_normal((6, 12, 10)))
    return model


def trunk_siamese_error(seed=0, max_entries=None):
    """FD check of siamese_bce(embed(l), embed(r)) w.r.t. every trainable parameter."""
    model = toy_model(seed)
    rng = np.random.default_rng(seed + 1)
    left, right = rng.standard_normal((2, 12, 10)), rng.standard_normal((2, 12, 10))
    targets = np.array([1.0, 0.0])

    def loss():
        return ad.siamese_bce(model.embed(left), model.embed(right), targets)

    for t in model.params.values():
        t.grad = None
    loss().backward()
    worst = 0.0
    for name in model.names():
        t = model.params[name]
        analytic = t.grad.copy()
        idxs = list(np.ndindex(t.data.shape))
        if max_entries is not None and len(idxs) > max_entries:
            pick = rng.choice(len(idxs), max_entries, replace=False)
            idxs = [idxs[i] for i in pick]
        num, ana = [], []
        for idx in idxs:
            orig = t.data[idx]
            t.data[idx] = orig + H
            up = float(loss().data)
            t.data[idx] = orig - H
            down = float(loss().data)
            t.data[idx] = orig
            num.append((up - down) / (2 * H))
            ana.append(analytic[idx])
        worst = max(worst, rel_error(ana, num))
    return worst
