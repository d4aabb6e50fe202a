"""Channel compensation: token-mean -> affine -> tanh, multiplied into the query.

When channels are pruned, the survivors can absorb the removed channels'
role because they were selected for high similarity; this module learns a
per-channel scale for that compensation. It reads the masked, projected
query, squeezes tokens by the mean, and emits a scale in (-1, 1) that the
caller broadcasts over tokens.
"""

from __future__ import annotations

import numpy as np

from .numerics import Tensor, matmul, tanh

# tanh(_INIT_BIAS) == 0.76: a near-neutral positive scale, trainable both ways.
_INIT_BIAS = float(np.arctanh(0.76))


def init_reweight(channels, dtype=np.float32):
    """Zero encode matrix plus a bias giving a constant initial scale of 0.76."""
    return {
        "w": Tensor(np.zeros((channels, channels), dtype=dtype)),
        "b": Tensor(np.full(channels, _INIT_BIAS, dtype=dtype)),
    }


def reweight_scale(tokens, w, b):
    """tanh(mean_over_tokens(tokens) @ w + b) with shape (batch, 1, channels)."""
    squeezed = tokens.mean(axis=1, keepdims=True)
    return tanh(matmul(squeezed, w) + b)
