"""Channel pruning indicators: similarity weights, head-rank alignment, masks.

Each prunable layer owns a learnable per-channel indicator m. A refresh
recomputes, from the current projection weights:

  * the cosine-similarity matrix of each head's channels,
  * per-channel weights w = 1 + max off-diagonal |similarity|  (so w in [1, 2]),
  * the weighted score w * m, rank-averaged across heads so every head
    keeps the same number of channels,
  * the binary mask: a channel is kept while its adjusted score stays
    below the threshold tau (redundant channels are driven up past it).

During training the mask enters the graph through a straight-through node,
so the gradient that lands on the mask passes unchanged to w * m and then,
with w detached, scales by w onto m.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .numerics import Tensor, mul, straight_through

log = logging.getLogger(__name__)

DEFAULT_TAU = 0.5
# starting indicator for layers without data-driven initialization
DEFAULT_INDICATOR = 0.4


@dataclass
class PrunableLayer:
    """One pruning decision: an indicator shared by one or more projections."""

    name: str
    param_names: list[str]
    heads: int
    out_channels: int
    indicator: Tensor
    weights: np.ndarray | None = None
    adjusted: np.ndarray | None = None
    mask: np.ndarray | None = None
    warned_empty: bool = field(default=False, repr=False)


def similarity_matrix(p_head):
    """Cosine similarity between the columns of one head's projection.

    A zero-norm column resembles nothing: its off-diagonal similarities are
    defined as 0 and its diagonal as 1 (logged once per call site).
    """
    p = np.asarray(p_head, dtype=np.float64)
    norms = np.sqrt((p * p).sum(axis=0))
    dead = norms == 0.0
    if dead.any():
        log.warning("similarity_matrix: %d zero-norm channel(s)", int(dead.sum()))
    safe = np.where(dead, 1.0, norms)
    unit = p / safe
    s = unit.T @ unit
    s[dead, :] = 0.0
    s[:, dead] = 0.0
    np.fill_diagonal(s, 1.0)
    return np.clip(s, -1.0, 1.0)


def similarity_weights(s):
    """Chebyshev-norm weight per channel: 1 + max over other channels of |s|.

    For a single-channel head the empty maximum is 0, giving weight 1.
    """
    s = np.asarray(s, dtype=np.float64)
    c = s.shape[0]
    if c == 1:
        return np.ones(1)
    off = np.abs(s).copy()
    np.fill_diagonal(off, 0.0)
    return 1.0 + off.max(axis=1)


def layer_similarity_weights(projection, heads):
    """Concatenated per-head weights for a full projection matrix."""
    p = np.asarray(projection)
    c_out = p.shape[1]
    if c_out % heads:
        raise ContractError(f"{c_out} output channels not divisible by {heads} heads")
    ch = c_out // heads
    return np.concatenate(
        [similarity_weights(similarity_matrix(p[:, k * ch:(k + 1) * ch]))
         for k in range(heads)]
    )


def weighted_indicator(weights, indicator):
    """w * m on the tape; w enters as a detached constant so the gradient
    reaches only m."""
    w = np.asarray(weights)
    if w.shape != indicator.data.shape:
        raise ContractError(
            f"weight length {w.shape} != indicator length {indicator.data.shape}"
        )
    return mul(indicator, Tensor(w.astype(indicator.data.dtype)))


def adjust_rank_average(scores, heads):
    """Replace each head's rank-r score with the mean of the rank-r scores
    across heads. Ranking is ascending; ties break toward the lower channel
    index. Per-head multisets of the output are identical, so thresholding
    keeps the same count in every head."""
    scores = np.asarray(scores, dtype=np.float64)
    c = scores.size
    if c % heads:
        raise ContractError(f"{c} channels not divisible by {heads} heads")
    if heads == 1:
        return scores.copy()
    per = scores.reshape(heads, c // heads)
    order = np.argsort(per, axis=1, kind="stable")
    ranked = np.take_along_axis(per, order, axis=1)
    avg = ranked.mean(axis=0)
    out = np.empty_like(per)
    np.put_along_axis(out, order, np.broadcast_to(avg, per.shape), axis=1)
    return out.reshape(c)


def binarize(scores, tau):
    """Keep (1) channels whose score is strictly below tau, prune (0) the rest."""
    if not 0.0 < tau < 1.0:
        raise ContractError(f"tau must lie in (0, 1), got {tau}")
    return (np.asarray(scores) < tau).astype(np.uint8)


def guard_min_keep(scores, mask, heads):
    """Force-keep the lowest-score channel of any head that would keep none."""
    mask = mask.copy()
    c = mask.size
    ch = c // heads
    for k in range(heads):
        lo, hi = k * ch, (k + 1) * ch
        if mask[lo:hi].sum() == 0:
            mask[lo + int(np.argmin(scores[lo:hi]))] = 1
    return mask


def refresh(layer, params, tau=DEFAULT_TAU, *, similarity_on=True, adjust_on=True):
    """Recompute weights, adjusted scores, and the binary mask from the
    current projection and indicator.

    For a shared group (query/key) the similarity structure comes from the
    first named projection (the query), and the single mask applies to all
    members, so they are pruned identically.
    """
    projection = params[layer.param_names[0]].data
    if similarity_on:
        layer.weights = layer_similarity_weights(projection, layer.heads)
    else:
        layer.weights = np.ones(layer.out_channels)
    scores = layer.weights * layer.indicator.data.astype(np.float64)
    if adjust_on:
        scores = adjust_rank_average(scores, layer.heads)
    layer.adjusted = scores
    mask = binarize(scores, tau)
    guarded = guard_min_keep(scores, mask, layer.heads)
    if guarded.sum() != mask.sum() and not layer.warned_empty:
        layer.warned_empty = True
        log.warning("layer %s: a head kept zero channels; forcing one per head",
                    layer.name)
    layer.mask = guarded


def mask_tensor(layer, dtype=np.float32):
    """Build the tape path m -> w*m -> straight-through(mask bits).

    The emitted tensor carries the refreshed binary mask in the forward pass;
    its gradient flows unchanged to w*m and then (w detached) as w * g to m.
    """
    if layer.mask is None:
        raise ContractError(f"layer {layer.name} has no refreshed mask")
    scored = weighted_indicator(layer.weights, layer.indicator)
    return straight_through(scored, layer.mask.astype(dtype))


def kept_per_head(mask, heads):
    """Number of kept channels in each head."""
    m = np.asarray(mask)
    return m.reshape(heads, m.size // heads).sum(axis=1).astype(int)


def apply_mask(weight, mask):
    """Zero the masked output channels (columns) of a projection matrix."""
    w = np.asarray(weight)
    m = np.asarray(mask)
    if m.shape != (w.shape[-1],):
        raise ContractError(f"mask length {m.shape} != output channels {w.shape[-1]}")
    return w * m.astype(w.dtype)
