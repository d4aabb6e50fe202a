"""A toy vision transformer hosting both attention mechanisms.

Patch embedding, a stack of pre-norm residual blocks (softmax attention or
kernelized linear attention, each followed by an FFN), token-mean pooling,
and a linear classifier. Everything is a pure function of (params, masks,
input) built from the numerics ops, so one code path serves training,
inference, and the 64-bit verification mode.

Tokens carry no positional information by default; mean pooling makes the
logits permutation-invariant over patches. A learned positional table can
be enabled in the spec.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ShapeError
from .numerics import (
    Tensor,
    cross_entropy,
    layer_norm,
    mac_scope,
    matmul,
    merge_heads,
    relu,
    softmax_rows,
    split_heads,
    swap_last2,
)
from .reweight import init_reweight, reweight_scale

__all__ = [
    "BlockSpec",
    "ModelSpec",
    "init_params",
    "patchify",
    "forward_model",
    "forward_tokens",
    "cross_entropy",
    "softmax_attention_head",
    "linear_attention_head",
]

ORIGINAL = "original"
LINEAR = "linear"

# positive feature map offset and normalizer epsilon for linear attention
FEATURE_EPS = 1e-6
NORM_EPS = 1e-6


@dataclass(frozen=True)
class BlockSpec:
    kind: str
    heads: int
    ffn_hidden: int
    # channel widths after compaction; None means the embedding width
    dim_qk: int | None = None
    dim_v: int | None = None

    def widths(self, embed_dim):
        qk = self.dim_qk if self.dim_qk is not None else embed_dim
        v = self.dim_v if self.dim_v is not None else embed_dim
        return qk, v


@dataclass(frozen=True)
class ModelSpec:
    image_size: int
    patch_size: int
    embed_dim: int
    num_classes: int
    blocks: tuple = field(default_factory=tuple)
    channels: int = 1
    pos_embed: bool = False

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ContractError(
                f"image size {self.image_size} not divisible by patch {self.patch_size}"
            )
        object.__setattr__(self, "blocks", tuple(self.blocks))
        for i, blk in enumerate(self.blocks):
            if blk.kind not in (ORIGINAL, LINEAR):
                raise ContractError(f"block {i}: unknown kind {blk.kind!r}")
            for label, width in (("qk", blk.dim_qk), ("v", blk.dim_v)):
                width = self.embed_dim if width is None else width
                if width % blk.heads:
                    raise ContractError(
                        f"block {i}: {label} width {width} not divisible by "
                        f"{blk.heads} heads"
                    )

    @property
    def num_tokens(self):
        return (self.image_size // self.patch_size) ** 2

    @property
    def patch_dim(self):
        return self.patch_size * self.patch_size * self.channels

    def to_dict(self):
        return {
            "image_size": self.image_size,
            "patch_size": self.patch_size,
            "embed_dim": self.embed_dim,
            "num_classes": self.num_classes,
            "channels": self.channels,
            "pos_embed": self.pos_embed,
            "blocks": [
                {k: v for k, v in
                 (("kind", b.kind), ("heads", b.heads), ("ffn_hidden", b.ffn_hidden),
                  ("dim_qk", b.dim_qk), ("dim_v", b.dim_v))
                 if v is not None}
                for b in self.blocks
            ],
        }

    @classmethod
    def from_dict(cls, d):
        known = {"image_size", "patch_size", "embed_dim", "num_classes",
                 "channels", "pos_embed", "blocks"}
        unknown = set(d) - known
        if unknown:
            raise ContractError(f"unknown model fields: {sorted(unknown)}")
        blocks = []
        for i, bd in enumerate(d.get("blocks", [])):
            bad = set(bd) - {"kind", "heads", "ffn_hidden", "dim_qk", "dim_v"}
            if bad:
                raise ContractError(f"block {i}: unknown fields {sorted(bad)}")
            blocks.append(BlockSpec(**bd))
        args = {k: v for k, v in d.items() if k != "blocks"}
        return cls(blocks=tuple(blocks), **args)


def init_params(spec, rng, dtype=np.float32):
    """Named parameter tensors for a fresh model.

    Projections start at N(0, 0.02); the classifier starts at zero so the
    initial logits are exactly the classifier bias.
    """
    def normal(*shape):
        return Tensor((rng.standard_normal(shape) * 0.02).astype(dtype))

    params = {"patch_embed": normal(spec.patch_dim, spec.embed_dim)}
    if spec.pos_embed:
        params["pos_embed"] = normal(spec.num_tokens, spec.embed_dim)
    c = spec.embed_dim
    for i, blk in enumerate(spec.blocks):
        qk, v = blk.widths(c)
        p = f"block{i}."
        params[p + "norm1.scale"] = Tensor(np.ones(c, dtype=dtype))
        params[p + "norm1.offset"] = Tensor(np.zeros(c, dtype=dtype))
        params[p + "q"] = normal(c, qk)
        params[p + "k"] = normal(c, qk)
        params[p + "v"] = normal(c, v)
        params[p + "out"] = normal(v, c)
        rw = init_reweight(qk, dtype)
        params[p + "rw.w"] = rw["w"]
        params[p + "rw.b"] = rw["b"]
        params[p + "norm2.scale"] = Tensor(np.ones(c, dtype=dtype))
        params[p + "norm2.offset"] = Tensor(np.zeros(c, dtype=dtype))
        params[p + "ffn1"] = normal(c, blk.ffn_hidden)
        params[p + "ffn2"] = normal(blk.ffn_hidden, c)
    params["norm_f.scale"] = Tensor(np.ones(c, dtype=dtype))
    params["norm_f.offset"] = Tensor(np.zeros(c, dtype=dtype))
    params["head.w"] = Tensor(np.zeros((c, spec.num_classes), dtype=dtype))
    params["head.b"] = Tensor(np.zeros(spec.num_classes, dtype=dtype))
    return params


def cast_params(params, dtype):
    return {k: Tensor(v.data.astype(dtype)) for k, v in params.items()}


def patchify(images, spec):
    """(B, H, W, C) pixel array -> (B, tokens, patch_dim), row-major patches."""
    images = np.asarray(images)
    b, h, w, ch = images.shape
    if h != spec.image_size or w != spec.image_size or ch != spec.channels:
        raise ShapeError(
            f"images {images.shape[1:]} do not match spec "
            f"({spec.image_size}, {spec.image_size}, {spec.channels})"
        )
    p = spec.patch_size
    grid = h // p
    tokens = images.reshape(b, grid, p, grid, p, ch)
    tokens = tokens.transpose(0, 1, 3, 2, 4, 5)
    return tokens.reshape(b, grid * grid, p * p * ch)


def softmax_attention_head(q, k, v, kept):
    """Softmax((q k^T) / sqrt(kept)) v for one head. Cost grows as tokens^2."""
    scores = matmul(q, swap_last2(k)) * (1.0 / math.sqrt(max(kept, 1)))
    return matmul(softmax_rows(scores), v)


def linear_attention_head(q, k, v):
    """phi(q) (phi(k)^T v), row-normalized; phi(x) = relu(x) + eps.

    The two matmuls cost tokens * c_qk * c_v; the normalizer is elementwise.
    """
    fq = relu(q) + FEATURE_EPS
    fk = relu(k) + FEATURE_EPS
    kv = matmul(swap_last2(fk), v)
    numer = matmul(fq, kv)
    ksum = fk.sum(axis=-2, keepdims=True)
    denom = (fq * ksum).sum(axis=-1, keepdims=True) + NORM_EPS
    return numer / denom


def _masked(param, mask):
    return param if mask is None else param * mask


def _kept_per_head(mask, heads, full_width):
    if mask is None:
        return [full_width // heads] * heads
    bits = mask.data
    ch = bits.size // heads
    return [int(bits[i * ch:(i + 1) * ch].sum()) for i in range(heads)]


def _attention(x_norm, spec, params, masks, i, blk, reweight_on, capture_qkv):
    prefix = f"block{i}."
    qk_width, v_width = blk.widths(spec.embed_dim)
    mask_qk = masks.get(prefix + "qk") if masks else None
    mask_v = masks.get(prefix + "v") if masks else None

    with mac_scope(f"block{i}/q"):
        q = matmul(x_norm, _masked(params[prefix + "q"], mask_qk))
    with mac_scope(f"block{i}/k"):
        k = matmul(x_norm, _masked(params[prefix + "k"], mask_qk))
    with mac_scope(f"block{i}/v"):
        v = matmul(x_norm, _masked(params[prefix + "v"], mask_v))

    if reweight_on:
        with mac_scope(f"block{i}/reweight"):
            scale = reweight_scale(q, params[prefix + "rw.w"], params[prefix + "rw.b"])
        q = q * scale

    if capture_qkv is not None and blk.kind == LINEAR:
        capture_qkv[i] = (q.data.copy(), k.data.copy(), v.data.copy())

    # heads fold into the batch axis so the whole block is a few large gemms
    batch = x_norm.data.shape[0]
    qh = split_heads(q, blk.heads)
    kh = split_heads(k, blk.heads)
    vh = split_heads(v, blk.heads)
    with mac_scope(f"block{i}/attn"):
        if blk.kind == ORIGINAL:
            kept = _kept_per_head(mask_qk, blk.heads, qk_width)
            inv = np.array([1.0 / math.sqrt(max(c, 1)) for c in kept],
                           dtype=q.data.dtype)
            inv = np.tile(inv, batch).reshape(batch * blk.heads, 1, 1)
            scores = matmul(qh, swap_last2(kh)) * Tensor(inv)
            merged = merge_heads(matmul(softmax_rows(scores), vh), blk.heads)
        else:
            merged = merge_heads(linear_attention_head(qh, kh, vh), blk.heads)
    with mac_scope(f"block{i}/out"):
        return matmul(merged, params[prefix + "out"])


def forward_tokens(tokens, spec, params, masks=None, *, reweight_on=True,
                   capture_qkv=None, capture_blocks=None):
    """Run the block stack on an already-embedded token tensor source.

    `tokens` is a raw (B, N, patch_dim) array; embedding happens here so the
    patch projection is on the tape.
    """
    x = Tensor(np.asarray(tokens, dtype=params["patch_embed"].data.dtype))
    with mac_scope("patch_embed"):
        x = matmul(x, params["patch_embed"])
    if spec.pos_embed:
        x = x + params["pos_embed"]
    for i, blk in enumerate(spec.blocks):
        prefix = f"block{i}."
        x_norm = layer_norm(x, params[prefix + "norm1.scale"],
                            params[prefix + "norm1.offset"])
        x = x + _attention(x_norm, spec, params, masks, i, blk,
                           reweight_on, capture_qkv)
        x_norm = layer_norm(x, params[prefix + "norm2.scale"],
                            params[prefix + "norm2.offset"])
        mask_f = masks.get(prefix + "ffn") if masks else None
        with mac_scope(f"block{i}/ffn1"):
            hidden = matmul(x_norm, _masked(params[prefix + "ffn1"], mask_f))
        with mac_scope(f"block{i}/ffn2"):
            x = x + matmul(relu(hidden), params[prefix + "ffn2"])
        if capture_blocks is not None:
            capture_blocks.append(x.data.copy())
    x = layer_norm(x, params["norm_f.scale"], params["norm_f.offset"])
    pooled = x.mean(axis=1)
    with mac_scope("head"):
        return matmul(pooled, params["head.w"]) + params["head.b"]


def forward_model(images, spec, params, masks=None, *, reweight_on=True,
                  capture_qkv=None, capture_blocks=None):
    """Images (B, H, W, C) in [-1, 1] floats -> logits (B, num_classes)."""
    return forward_tokens(patchify(images, spec), spec, params, masks,
                          reweight_on=reweight_on, capture_qkv=capture_qkv,
                          capture_blocks=capture_blocks)
