"""Scaled dot-product attention shared by the experts and the Transformer encoder."""
from __future__ import annotations

from typing import Optional

import numpy as np

from moef import numerics as nm
from moef.errors import DimensionError


def split_heads(x: nm.Tensor, heads: int) -> nm.Tensor:
    """(B, L, H*dk) -> (B, H, L, dk)."""
    b, length, width = x.shape
    if width % heads:
        raise DimensionError(f"width {width} is not divisible by {heads} heads")
    return nm.transpose(nm.reshape(x, (b, length, heads, width // heads)), (0, 2, 1, 3))


def merge_heads(x: nm.Tensor) -> nm.Tensor:
    """(B, H, L, dk) -> (B, L, H*dk)."""
    b, h, length, dk = x.shape
    return nm.reshape(nm.transpose(x, (0, 2, 1, 3)), (b, length, h * dk))


def multi_head_attention(
    q: nm.Tensor, k: nm.Tensor, v: nm.Tensor, heads: int, key_mask: Optional[np.ndarray] = None
) -> nm.Tensor:
    """Attention over already-projected (B, L, H*dk) queries/keys/values.

    ``key_mask`` is (B, L) booleans; False keys receive zero weight.
    """
    qh, kh, vh = split_heads(q, heads), split_heads(k, heads), split_heads(v, heads)
    dk = qh.shape[-1]
    scores = nm.matmul(qh, nm.transpose(kh, (0, 1, 3, 2))) * (1.0 / np.sqrt(dk))
    mask = None if key_mask is None else key_mask[:, None, None, :]
    weights = nm.softmax(scores, axis=-1, mask=mask)
    return merge_heads(nm.matmul(weights, vh))


def sinusoidal_positions(length: int, width: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(width)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / width)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
