"""Tensors, reverse-mode autodiff, the separable-conv trunk and its losses."""

from .autodiff import (Tensor, backward, contrastive_bce, layer_norm, separable_conv2d,
                       siamese_bce, siamese_distance, softmax_cross_entropy)
from .kernels import BACKEND
from .model import Model, TrunkConfig, count_parameters, load_checkpoint, save_checkpoint
from .optim import Adam, SGDMomentum, make_optimizer

__all__ = [
    "Tensor", "backward", "contrastive_bce", "layer_norm", "separable_conv2d", "siamese_bce",
    "siamese_distance", "softmax_cross_entropy", "BACKEND", "Model", "TrunkConfig",
    "count_parameters", "load_checkpoint", "save_checkpoint", "Adam", "SGDMomentum",
    "make_optimizer",
]
