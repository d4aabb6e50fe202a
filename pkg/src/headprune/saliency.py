"""Data-driven starting indicators for linear-attention query/key channels.

The token-relation product q k^T v decomposes over channels as a sum of
rank-one terms q_i (k_i^T v). Each term is compared with the full product
by the L1 distance between their singular-value spectra, accumulated over a
fixed sample of training images, and min-max normalized into the layer's
starting indicator. Channels whose lone contribution already resembles the
full product score low and start out kept.

Everything here runs in inference mode with unpruned masks and the reweight
module at its initialization value.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericsError
from .model import LINEAR, forward_model
from .numerics import singular_values_batch

DEGENERATE_INDICATOR = 0.25
# top of the starting band: w * 0.25 stays below a 0.5 threshold for any
# similarity weight w < 2, so initialized layers begin fully kept
INIT_BAND = 0.25


def channel_contribution(q, k, v, i):
    """q_i (k_i^T v) for one channel, never materializing a token-by-token map."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    return np.outer(q[:, i], k[:, i] @ v)


def spectrum_distances(q, k, v):
    """Per-channel spectra distances for one batch of captured projections.

    q, k, v: (batch, tokens, channels). Returns (batch, channels) distances
    T^j_i = || spectrum(q k^T v) - spectrum(q_i k_i^T v) ||_1.

    Each channel's contribution q_i (k_i^T v) is an outer product, so its
    spectrum is a single value ||q_i|| * ||k_i^T v|| followed by zeros; only
    the full product needs the iterative solver.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    kv = np.swapaxes(k, -1, -2) @ v                      # (B, C, C), rows k_i^T v
    full = q @ kv                                        # (B, N, C)
    spectra = singular_values_batch(full)                # (B, min(N, C)) descending
    lead = np.sqrt((q * q).sum(axis=1))                  # (B, C) column norms of q
    lead = lead * np.sqrt((kv * kv).sum(axis=2))
    tail = spectra[:, 1:].sum(axis=1, keepdims=True)
    return np.abs(spectra[:, :1] - lead) + tail


def accumulate_distances(spec, params, images, batch_size, *, reweight_on=True):
    """Sum spectra distances per linear-attention block over `images`.

    Returns {block index: T vector (channels,)} plus the image count.
    """
    totals = {}
    count = 0
    for lo in range(0, len(images), batch_size):
        chunk = images[lo:lo + batch_size]
        captured = {}
        forward_model(chunk, spec, params, masks=None, reweight_on=reweight_on,
                      capture_qkv=captured)
        for i, (q, k, v) in captured.items():
            try:
                t = spectrum_distances(q, k, v).sum(axis=0)
            except NumericsError as err:
                raise NumericsError(
                    f"spectrum failed on block {i}, images "
                    f"[{lo}, {lo + len(chunk)}): {err}",
                    residual=err.residual,
                ) from err
            totals[i] = totals.get(i, 0.0) + t
        count += len(chunk)
    return totals, count


def normalize_to_indicator(t):
    """Min-max normalize distances to [0, 1]; a constant vector maps to 0.25
    everywhere (uniform, below the keep threshold)."""
    t = np.asarray(t, dtype=np.float64)
    lo, hi = t.min(), t.max()
    if hi == lo:
        return np.full(t.shape, DEGENERATE_INDICATOR)
    return (t - lo) / (hi - lo)


def initial_indicator(t):
    """Starting indicator: the normalized ranking squeezed into (0, 0.25].

    Installing the raw [0, 1] vector would put half the channels past the
    keep threshold before the first step, defeating the initialization's
    purpose (the attention must start operational). Scaling by the band
    keeps every channel initially, with the data-driven ordering intact;
    the degenerate constant case already sits at the band's top.
    """
    m = normalize_to_indicator(t)
    if m.min() == m.max():
        return m
    return INIT_BAND * m


def linear_block_ids(spec):
    return [i for i, blk in enumerate(spec.blocks) if blk.kind == LINEAR]
