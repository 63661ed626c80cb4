"""Separable-conv residual trunk, heads and checkpoint I/O."""

from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict, dataclass
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

CHECKPOINT_MAGIC = b"KWSC"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrunkConfig:
    input_shape: Tuple[int, int] = (98, 40)
    channels: Tuple[int, ...] = (24, 24, 32, 32, 48, 48)
    strides: Tuple[int, ...] = (2, 1, 2, 1, 2, 1)
    kernel: int = 3
    dense_hidden: int = 128
    embedding_dim: int = 128
    embedding_scale: float = 0.02

    def __post_init__(self):
        for name in ("input_shape", "channels", "strides"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if len(self.channels) != 6 or len(self.strides) != 6:
            raise ValueError("the trunk has exactly six convolution layers")
        if self.embedding_dim != 128:
            raise ValueError("embedding dimension is fixed at 128")
        if not self.embedding_scale > 0:
            raise ValueError("embedding_scale must be positive")
        if self.kernel % 2 == 0:
            raise ValueError("kernel size must be odd")
        for i in range(0, 6, 2):
            if self.strides[i] > 1 and self.strides[i + 1] > 1:
                raise ValueError("at most one strided layer per residual pair")
            if self.channels[i] > self.channels[i + 1]:
                raise ValueError("channels may not shrink inside a residual pair")
            cin = 1 if i == 0 else self.channels[i - 1]
            if self.channels[i + 1] < cin:
                raise ValueError("residual pairs may not reduce channel count")

    def spatial_after(self) -> Tuple[int, int]:
        h, w = self.input_shape
        for s in self.strides:
            h, w = -(-h // s), -(-w // s)
        return h, w

    @property
    def flat_dim(self) -> int:
        h, w = self.spatial_after()
        return h * w * self.channels[-1]

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "TrunkConfig":
        return cls(**d)


def _buffer_shapes(cfg: TrunkConfig, num_classes: Optional[int]) -> List[Tuple[str, tuple]]:
    shapes = [("input.mean", (cfg.input_shape[1],)), ("input.std", (cfg.input_shape[1],))]
    if num_classes is not None:
        shapes += [("head_input.mean", (cfg.embedding_dim,)),
                   ("head_input.std", (cfg.embedding_dim,))]
    return shapes


def _param_shapes(cfg: TrunkConfig, num_classes: Optional[int]) -> List[Tuple[str, tuple]]:
    shapes = []
    cin = 1
    for i, cout in enumerate(cfg.channels, 1):
        shapes += [(f"block{i}.depthwise", (cfg.kernel, cfg.kernel, cin)),
                   (f"block{i}.pointwise", (cin, cout)),
                   (f"block{i}.pointwise_bias", (cout,)),
                   (f"block{i}.ln_gain", (cout,)),
                   (f"block{i}.ln_bias", (cout,))]
        cin = cout
    shapes += [("dense1.weight", (cfg.flat_dim, cfg.dense_hidden)),
               ("dense1.bias", (cfg.dense_hidden,)),
               ("dense2.weight", (cfg.dense_hidden, cfg.embedding_dim)),
               ("dense2.bias", (cfg.embedding_dim,))]
    if num_classes is not None:
        shapes += [("head.weight", (cfg.embedding_dim, num_classes)),
                   ("head.bias", (num_classes,))]
    return shapes


def count_parameters(cfg: TrunkConfig, num_classes: Optional[int] = None) -> int:
    return sum(int(np.prod(s)) for _, s in _param_shapes(cfg, num_classes))


def _init_value(name: str, shape: tuple, rng: np.random.Generator) -> np.ndarray:
    if name.endswith(("ln_gain", ".std")):
        return np.ones(shape)
    if name.endswith(("bias", "ln_bias", ".mean")):
        return np.zeros(shape)
    fan_in = shape[0] * shape[1] if name.endswith("depthwise") else shape[0]
    limit = np.sqrt(3.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def is_conv_param(name: str) -> bool:
    return name.startswith("block")


def is_head_param(name: str) -> bool:
    return name.startswith("head.")


def is_buffer(name: str) -> bool:
    """Non-trainable standardisation statistics."""
    return name.startswith(("input.", "head_input."))


class Model:
    """Trunk (six separable-conv blocks, two dense layers) plus an optional softmax head.

    Without a head the model is the siamese embedding network.  Inputs are
    standardised per coefficient by the non-trainable ``input.mean`` /
    ``input.std`` buffers (identity until :meth:`adapt` is called); the head
    likewise sees the embedding standardised by ``head_input.*``.
    """

    def __init__(self, config: TrunkConfig, params: Dict[str, np.ndarray],
                 num_classes: Optional[int] = None, dtype=np.float32):
        self.config = config
        self.num_classes = num_classes
        self.dtype = np.dtype(dtype)
        expected = _param_shapes(config, num_classes)
        params = dict(params)
        buffers = _buffer_shapes(config, num_classes)
        for name, shape in buffers:
            params.setdefault(name, _init_value(name, shape, None))
        expected = buffers + expected
        missing = [n for n, _ in expected if n not in params]
        if missing:
            raise ValueError(f"missing parameters: {missing}")
        self.params: Dict[str, Tensor] = {}
        for name, shape in expected:
            arr = np.asarray(params[name], dtype=self.dtype)
            if arr.shape != tuple(shape):
                raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}")
            self.params[name] = Tensor(arr.copy(), requires_grad=not is_buffer(name), name=name)

    @classmethod
    def init(cls, config: TrunkConfig, seed: int, num_classes: Optional[int] = None,
             dtype=np.float32) -> "Model":
        rng = np.random.default_rng(seed)
        values = {n: _init_value(n, s, rng) for n, s in _param_shapes(config, num_classes)}
        return cls(config, values, num_classes, dtype)

    def adapt(self, feats) -> None:
        """Set the input standardisation buffers from a stack of feature matrices."""
        x = np.asarray(feats, dtype=np.float64).reshape(-1, self.config.input_shape[1])
        self.params["input.mean"].data = x.mean(axis=0).astype(self.dtype)
        self.params["input.std"].data = np.maximum(x.std(axis=0), 1e-6).astype(self.dtype)

    def adapt_head(self, feats, batch_size: int = 256) -> None:
        """Set the head's embedding standardisation from a stack of feature matrices."""
        if self.num_classes is None:
            raise ValueError("model has no classification head")
        feats = np.asarray(feats)
        e = np.concatenate([self.embed(feats[i:i + batch_size]).data.astype(np.float64)
                            for i in range(0, len(feats), batch_size)])
        self.params["head_input.mean"].data = e.mean(axis=0).astype(self.dtype)
        self.params["head_input.std"].data = np.maximum(e.std(axis=0), 1e-8).astype(self.dtype)

    def state(self) -> Dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.params.items()}

    def names(self, include_conv: bool = True, include_dense: bool = True,
              include_head: bool = True) -> List[str]:
        out = []
        for n in self.params:
            if is_buffer(n):
                continue
            if is_conv_param(n) and include_conv:
                out.append(n)
            elif is_head_param(n) and include_head:
                out.append(n)
            elif not is_conv_param(n) and not is_head_param(n) and include_dense:
                out.append(n)
        return out

    def set_trainable(self, names: Iterable[str]) -> None:
        keep = set(names)
        for n, t in self.params.items():
            t.requires_grad = n in keep and not is_buffer(n)

    def with_head(self, num_classes: Optional[int], seed: int) -> "Model":
        """Copy of this model with the final layer replaced by a fresh head (or removed)."""
        values = {n: v for n, v in self.state().items()
                  if not is_head_param(n) and not n.startswith("head_input.")}
        if num_classes is not None:
            rng = np.random.default_rng(seed)
            for n, s in _param_shapes(self.config, num_classes):
                if is_head_param(n):
                    values[n] = _init_value(n, s, rng)
        return Model(self.config, values, num_classes, self.dtype)

    def parameter_count(self) -> int:
        """Trainable parameter count (buffers excluded)."""
        return sum(t.data.size for n, t in self.params.items() if not is_buffer(n))

    def _input(self, feats) -> Tensor:
        x = np.asarray(feats, dtype=self.dtype)
        if x.ndim == 2:
            x = x[None]
        if x.ndim == 3:
            x = x[..., None]
        if x.shape[1:3] != self.config.input_shape or x.shape[3] != 1:
            raise ValueError(f"expected input (*, {self.config.input_shape}), got {x.shape}")
        mean, std = self.params["input.mean"].data, self.params["input.std"].data
        return Tensor((x - mean[:, None]) / std[:, None])

    def embed(self, feats) -> Tensor:
        p, cfg = self.params, self.config
        x = self._input(feats)
        for pair in range(3):
            h = x
            stride = 1
            for i in (2 * pair + 1, 2 * pair + 2):
                s = cfg.strides[i - 1]
                stride *= s
                h = ad.separable_conv2d(h, p[f"block{i}.depthwise"], p[f"block{i}.pointwise"],
                                        p[f"block{i}.pointwise_bias"], stride=s)
                h = ad.relu(ad.layer_norm(h, p[f"block{i}.ln_gain"], p[f"block{i}.ln_bias"]))
            x = ad.add(ad.shortcut(x, stride, cfg.channels[2 * pair + 1]), h)
        x = ad.flatten(x)
        x = ad.relu(ad.dense(x, p["dense1.weight"], p["dense1.bias"]))
        x = ad.dense(x, p["dense2.weight"], p["dense2.bias"])
        # fixed output scale keeps initial L1 distances O(1) under exp(-L1)
        return ad.mul(x, Tensor(np.asarray(cfg.embedding_scale, dtype=self.dtype)))

    def logits(self, feats) -> Tensor:
        if self.num_classes is None:
            raise ValueError("model has no classification head")
        p = self.params
        e = ad.add(self.embed(feats), Tensor(-p["head_input.mean"].data))
        e = ad.mul(e, Tensor(1.0 / p["head_input.std"].data))
        return ad.dense(e, p["head.weight"], p["head.bias"])

    def predict(self, feats, batch_size: int = 256) -> np.ndarray:
        feats = np.asarray(feats)
        out = [np.argmax(self.logits(feats[i:i + batch_size]).data, axis=1)
               for i in range(0, len(feats), batch_size)]
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def save_checkpoint(path: str | os.PathLike, model: Model, metadata: Optional[dict] = None) -> None:
    """Binary checkpoint plus a ``<path>.json`` metadata sidecar."""
    cfg_bytes = json.dumps({"trunk": model.config.to_dict(), "num_classes": model.num_classes},
                           sort_keys=True).encode()
    chunks = [CHECKPOINT_MAGIC, struct.pack("<HI", CHECKPOINT_VERSION, len(cfg_bytes)), cfg_bytes,
              struct.pack("<I", len(model.params))]
    for name, t in model.params.items():
        nb = name.encode()
        chunks.append(struct.pack("<HB", len(nb), t.data.ndim) + nb)
        chunks.append(struct.pack(f"<{t.data.ndim}I", *t.data.shape))
        chunks.append(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))
    if metadata is not None:
        with open(f"{os.fspath(path)}.json", "w") as fh:
            json.dump(metadata, fh, indent=2, sort_keys=True)


def load_checkpoint(path: str | os.PathLike, dtype=np.float32) -> Tuple[Model, dict]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint")
    version, n_cfg = struct.unpack_from("<HI", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 10
    header = json.loads(raw[off:off + n_cfg])
    off += n_cfg
    (n_params,) = struct.unpack_from("<I", raw, off)
    off += 4
    values = {}
    for _ in range(n_params):
        n_name, ndim = struct.unpack_from("<HB", raw, off)
        off += 3
        name = raw[off:off + n_name].decode()
        off += n_name
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        values[name] = np.frombuffer(raw, dtype="<f4", count=size, offset=off).reshape(shape)
        off += 4 * size
    meta_path = f"{os.fspath(path)}.json"
    meta = {}
    if os.path.exists(meta_path):
        with open(meta_path) as fh:
            meta = json.load(fh)
    cfg = TrunkConfig.from_dict(header["trunk"])
    return Model(cfg, values, header["num_classes"], dtype), meta
