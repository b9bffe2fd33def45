"""Per-modality feature extraction frontends.

``precomputed`` passes stored feature vectors through. ``tiny-conv`` is a
small trainable stand-in for a CNN backbone: a 3x3 stride-2 valid
convolution with ELU, a 1x1 convolution to the feature width, and global
average pooling.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError
from .optim import ParamStore, init_params

KERNEL = 3
STRIDE = 2


def im2col(images: np.ndarray) -> np.ndarray:
    """(B, H, W, C) -> (B, P, KERNEL*KERNEL*C) patches of a valid, strided 3x3 conv."""
    win = sliding_window_view(images, (KERNEL, KERNEL), axis=(1, 2))[:, ::STRIDE, ::STRIDE]
    b, oh, ow, c = win.shape[:4]
    # window layout (B, oh, ow, C, kh, kw) -> (B, P, kh*kw*C)
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(b, oh * ow, -1)


def add_tiny_conv(store: ParamStore, prefix: str, channels: int, feature_dim: int, rng) -> None:
    store.add(f"{prefix}.conv.W", init_params("he", (channels, KERNEL * KERNEL * 3), rng))
    store.add(f"{prefix}.conv.b", init_params("zero", (channels,), rng))
    store.add(f"{prefix}.proj.W", init_params("he", (feature_dim, channels), rng))
    store.add(f"{prefix}.proj.b", init_params("zero", (feature_dim,), rng))


def tiny_conv(images: np.ndarray, store: ParamStore, prefix: str) -> Tensor:
    patches = Tensor(im2col(np.asarray(images, dtype=np.float64)))
    a = ad.elu(ad.affine(patches, store[f"{prefix}.conv.W"], store[f"{prefix}.conv.b"]))
    fmap = ad.affine(a, store[f"{prefix}.proj.W"], store[f"{prefix}.proj.b"])
    return global_average_pool(fmap)


def global_average_pool(fmap: Tensor) -> Tensor:
    """(B, P, F) feature map -> (B, F)."""
    return ad.mean(fmap, axis=1)


def precomputed(vectors, feature_dim: int) -> Tensor:
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != feature_dim:
        raise DimensionError(f"feature vectors of shape {x.shape[1:]}, expected ({feature_dim},)")
    return Tensor(x)
