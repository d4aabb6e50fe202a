"""Tensor arithmetic, reverse-mode gradients, spectra, and the MAC counter."""

from .optim import AdamW, cosine_lr
from .spectral import singular_values, singular_values_batch
from .tensor import (
    Tape,
    Tensor,
    absval,
    add,
    concat_last,
    cross_entropy,
    div,
    layer_norm,
    mac_scope,
    macs_active,
    macs_disable,
    macs_enable,
    macs_read,
    macs_read_by_scope,
    matmul,
    merge_heads,
    mul,
    neg,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    slice_last,
    softmax_rows,
    split_heads,
    straight_through,
    sub,
    swap_last2,
    tanh,
)

__all__ = [
    "AdamW",
    "cosine_lr",
    "singular_values",
    "singular_values_batch",
    "Tape",
    "Tensor",
    "absval",
    "add",
    "concat_last",
    "cross_entropy",
    "div",
    "layer_norm",
    "mac_scope",
    "macs_active",
    "macs_disable",
    "macs_enable",
    "macs_read",
    "macs_read_by_scope",
    "matmul",
    "merge_heads",
    "mul",
    "neg",
    "reduce_mean",
    "reduce_sum",
    "relu",
    "reshape",
    "slice_last",
    "softmax_rows",
    "split_heads",
    "straight_through",
    "sub",
    "swap_last2",
    "tanh",
]
