"""Multiply-accumulate accounting over pruned structures, and the budget loss.

Per image: every projection contributes tokens * c_in * c_out; linear
attention contributes, per head, tokens * c_qk^2 + tokens * c_qk * c_v
(query and key widths match because their indicator is shared); original
attention contributes tokens^2 * c_q + tokens^2 * c_v. The FFN pair and the
classifier count as projections; the classifier sees one pooled token.

The same formula walk serves two callers: an exact integer report, and a
differentiable total built from relaxed kept-counts (sums of mask values
flowing through the straight-through node) so budget pressure reaches every
indicator.

Reweight-module MACs are outside the budget formula but reported
informationally.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .model import LINEAR
from .numerics import Tensor, absval, slice_last

PROJECTION = "projection"
LINEAR_ATTENTION = "linear-attention"
ORIGINAL_ATTENTION = "original-attention"


@dataclass
class LayerMacs:
    label: str
    kind: str
    n_tokens: int
    detail: str
    macs: int


@dataclass
class BudgetReport:
    entries: list = field(default_factory=list)
    informational: list = field(default_factory=list)
    total: int = 0
    target: int | None = None
    loss: float | None = None

    def by_label(self):
        return {e.label: e.macs for e in self.entries}

    def as_dict(self):
        return {
            "total_macs": self.total,
            "target_macs": self.target,
            "budget_loss": self.loss,
            "layers": [vars(e) for e in self.entries],
            "informational": [vars(e) for e in self.informational],
        }

    def as_json(self):
        return json.dumps(self.as_dict(), indent=2)

    def format_table(self):
        lines = [f"{'layer':<16} {'kind':<20} {'N':>6} {'macs':>12}  detail"]
        for e in self.entries:
            lines.append(f"{e.label:<16} {e.kind:<20} {e.n_tokens:>6} "
                         f"{e.macs:>12}  {e.detail}")
        for e in self.informational:
            lines.append(f"{e.label:<16} {e.kind + ' (info)':<20} {e.n_tokens:>6} "
                         f"{e.macs:>12}  {e.detail}")
        lines.append(f"{'total':<16} {'':<20} {'':>6} {self.total:>12}")
        if self.target is not None:
            lines.append(f"{'target':<16} {'':<20} {'':>6} {self.target:>12}")
        if self.loss is not None:
            lines.append(f"budget loss: {self.loss:.6f}")
        return "\n".join(lines)


def _head_counts_from_bits(bits, heads, full_width):
    if bits is None:
        ch = full_width // heads
        return [ch] * heads
    bits = np.asarray(bits)
    ch = bits.size // heads
    return [int(bits[i * ch:(i + 1) * ch].sum()) for i in range(heads)]


def _head_counts_relaxed(mask_tensor, heads, full_width):
    if mask_tensor is None:
        ch = full_width // heads
        return [float(ch)] * heads
    ch = mask_tensor.data.size // heads
    return [slice_last(mask_tensor, i * ch, (i + 1) * ch).sum() for i in range(heads)]


def _attention_macs(kind, n, kq_heads, kv_heads):
    total = 0
    for kq, kv in zip(kq_heads, kv_heads):
        if kind == LINEAR:
            # the two gemms of q (k^T v): key and query widths always match
            # (shared indicator), so each contributes n * c_qk * c_v
            total = total + n * kq * kv + n * kq * kv
        else:
            total = total + n * n * kq + n * n * kv
    return total


def _walk(spec, kept_qk, kept_v, kept_ffn):
    """Yield (label, kind, n_tokens, macs, detail) over every counted layer."""
    n = spec.num_tokens
    c = spec.embed_dim
    yield ("patch_embed", PROJECTION, n, n * spec.patch_dim * c,
           f"{spec.patch_dim}->{c}")
    for i, blk in enumerate(spec.blocks):
        qk_w, v_w = blk.widths(c)
        kq = kept_qk(i, blk, qk_w)
        kv = kept_v(i, blk, v_w)
        kf = kept_ffn(i, blk)
        sq = sum(kq)
        sv = sum(kv)
        yield (f"block{i}/q", PROJECTION, n, n * c * sq, f"{c}->{_fmt(sq)}")
        yield (f"block{i}/k", PROJECTION, n, n * c * sq, f"{c}->{_fmt(sq)}")
        yield (f"block{i}/v", PROJECTION, n, n * c * sv, f"{c}->{_fmt(sv)}")
        akind = LINEAR_ATTENTION if blk.kind == LINEAR else ORIGINAL_ATTENTION
        yield (f"block{i}/attn", akind, n, _attention_macs(blk.kind, n, kq, kv),
               f"heads={blk.heads} kept q/k={_fmt(sq)} v={_fmt(sv)}")
        yield (f"block{i}/out", PROJECTION, n, n * sv * c, f"{_fmt(sv)}->{c}")
        yield (f"block{i}/ffn1", PROJECTION, n, n * c * kf, f"{c}->{_fmt(kf)}")
        yield (f"block{i}/ffn2", PROJECTION, n, n * kf * c, f"{_fmt(kf)}->{c}")
    yield ("head", PROJECTION, 1, c * spec.num_classes,
           f"{c}->{spec.num_classes}")


def _fmt(x):
    if isinstance(x, Tensor):
        return str(int(round(float(x.data))))
    return str(int(x))


def compute_macs(spec, masks=None, target=None):
    """Exact per-layer and total MAC counts under the given binary masks.

    `masks` maps indicator names (block{i}.qk / .v / .ffn) to bit vectors;
    missing entries mean the layer is unpruned.
    """
    masks = masks or {}

    def kept_qk(i, blk, w):
        return _head_counts_from_bits(masks.get(f"block{i}.qk"), blk.heads, w)

    def kept_v(i, blk, w):
        return _head_counts_from_bits(masks.get(f"block{i}.v"), blk.heads, w)

    def kept_ffn(i, blk):
        bits = masks.get(f"block{i}.ffn")
        return blk.ffn_hidden if bits is None else int(np.asarray(bits).sum())

    report = BudgetReport(target=target)
    for label, kind, n, macs, detail in _walk(spec, kept_qk, kept_v, kept_ffn):
        report.entries.append(LayerMacs(label, kind, n, detail, int(macs)))
        report.total += int(macs)
    for i, blk in enumerate(spec.blocks):
        qk_w, _ = blk.widths(spec.embed_dim)
        report.informational.append(
            LayerMacs(f"block{i}/reweight", PROJECTION, 1, f"{qk_w}->{qk_w}",
                      qk_w * qk_w))
    return report


def relaxed_mac_total(spec, mask_tensors):
    """Differentiable M_prune from mask tensors on the tape."""

    def kept_qk(i, blk, w):
        return _head_counts_relaxed(mask_tensors.get(f"block{i}.qk"), blk.heads, w)

    def kept_v(i, blk, w):
        return _head_counts_relaxed(mask_tensors.get(f"block{i}.v"), blk.heads, w)

    def kept_ffn(i, blk):
        t = mask_tensors.get(f"block{i}.ffn")
        return float(blk.ffn_hidden) if t is None else t.sum()

    total = 0.0
    for _, _, _, macs, _ in _walk(spec, kept_qk, kept_v, kept_ffn):
        total = total + macs
    if not isinstance(total, Tensor):
        total = Tensor(np.asarray(total, dtype=np.float32))
    return total


def mac_loss(m_prune, m_target, lam=1.0):
    """lam * |M_prune - M_target| / M_target; differentiable when M_prune is
    a Tensor."""
    if m_target <= 0:
        raise ContractError(f"MAC target must be positive, got {m_target}")
    if isinstance(m_prune, Tensor):
        return absval(m_prune - float(m_target)) * (lam / m_target)
    return lam * abs(m_prune - m_target) / m_target


def minimum_masks(spec):
    """Masks keeping exactly one channel per head everywhere (the guard floor)."""
    masks = {}
    for i, blk in enumerate(spec.blocks):
        qk_w, v_w = blk.widths(spec.embed_dim)
        for suffix, width, heads in (("qk", qk_w, blk.heads), ("v", v_w, blk.heads),
                                     ("ffn", blk.ffn_hidden, 1)):
            bits = np.zeros(width, dtype=np.uint8)
            ch = width // heads
            bits[np.arange(heads) * ch] = 1
            masks[f"block{i}.{suffix}"] = bits
    return masks
