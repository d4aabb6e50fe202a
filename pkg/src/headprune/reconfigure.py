"""Physically remove masked channels, producing a smaller equivalent model.

The plan lists, per prunable layer and per head, the kept channel indices
in their original order. Planning fails hard if any layer's heads keep
unequal counts: that is the misalignment the rank-average adjustment
exists to prevent, and compacting such a layer would mix head subspaces.

Compaction gathers projection columns and fixes up every consumer: the
attention output projection's rows follow the value plan, the reweight
matrix is sliced on both axes by the query plan, and the second FFN
matrix's rows follow the hidden plan. Head count never shrinks; only
per-head width does.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .budget import compute_macs
from .errors import EquivalenceError, MisalignmentError
from .model import BlockSpec, forward_model
from .numerics import Tensor

__all__ = ["CompactPlan", "plan", "compact", "verify_equivalence", "const_masks"]


@dataclass
class LayerPlan:
    kept: list  # per head: list of absolute kept indices, ascending

    @property
    def flat(self):
        return [i for head in self.kept for i in head]

    @property
    def per_head(self):
        return len(self.kept[0]) if self.kept else 0


@dataclass
class CompactPlan:
    layers: dict  # indicator name -> LayerPlan


def _layer_plan(name, bits, heads):
    bits = np.asarray(bits)
    ch = bits.size // heads
    kept = [list(np.nonzero(bits[h * ch:(h + 1) * ch])[0] + h * ch)
            for h in range(heads)]
    counts = [len(k) for k in kept]
    if len(set(counts)) > 1:
        raise MisalignmentError(
            f"layer {name}: heads keep unequal channel counts {counts}"
        )
    if counts[0] == 0:
        raise MisalignmentError(f"layer {name}: every channel pruned")
    return LayerPlan(kept)


def plan(masks, spec):
    """Deterministic compaction plan; raises MisalignmentError on unequal
    per-head kept counts."""
    layers = {}
    for i, blk in enumerate(spec.blocks):
        qk_w, v_w = blk.widths(spec.embed_dim)
        for suffix, width, heads in (("qk", qk_w, blk.heads), ("v", v_w, blk.heads),
                                     ("ffn", blk.ffn_hidden, 1)):
            name = f"block{i}.{suffix}"
            bits = masks.get(name)
            if bits is None:
                bits = np.ones(width, dtype=np.uint8)
            layers[name] = _layer_plan(name, bits, heads)
    return CompactPlan(layers)


def compact(params, compact_plan, spec):
    """Gather kept channels into dense parameters and a matching spec."""
    new_params = {k: Tensor(v.data.copy()) for k, v in params.items()}
    new_blocks = []
    for i, blk in enumerate(spec.blocks):
        idx_qk = compact_plan.layers[f"block{i}.qk"].flat
        idx_v = compact_plan.layers[f"block{i}.v"].flat
        idx_f = compact_plan.layers[f"block{i}.ffn"].flat
        p = f"block{i}."
        new_params[p + "q"] = Tensor(params[p + "q"].data[:, idx_qk].copy())
        new_params[p + "k"] = Tensor(params[p + "k"].data[:, idx_qk].copy())
        new_params[p + "v"] = Tensor(params[p + "v"].data[:, idx_v].copy())
        new_params[p + "out"] = Tensor(params[p + "out"].data[idx_v, :].copy())
        new_params[p + "rw.w"] = Tensor(
            params[p + "rw.w"].data[np.ix_(idx_qk, idx_qk)].copy())
        new_params[p + "rw.b"] = Tensor(params[p + "rw.b"].data[idx_qk].copy())
        new_params[p + "ffn1"] = Tensor(params[p + "ffn1"].data[:, idx_f].copy())
        new_params[p + "ffn2"] = Tensor(params[p + "ffn2"].data[idx_f, :].copy())
        new_blocks.append(BlockSpec(
            kind=blk.kind, heads=blk.heads, ffn_hidden=len(idx_f),
            dim_qk=None if len(idx_qk) == spec.embed_dim else len(idx_qk),
            dim_v=None if len(idx_v) == spec.embed_dim else len(idx_v)))
    return new_params, replace(spec, blocks=tuple(new_blocks))


def const_masks(masks, dtype=np.float32):
    """Bit vectors -> constant mask tensors for an inference forward."""
    return {name: Tensor(np.asarray(bits, dtype=dtype))
            for name, bits in masks.items()}


def verify_equivalence(spec, params, masks, compact_spec, compact_params,
                       n_trials=512, rng=None, tol=1e-4, reweight_on=True):
    """Compare masked and compacted forwards on random inputs.

    Returns a report dict. Raises EquivalenceError, naming the first
    diverging block, when the max-abs logit deviation exceeds `tol` or the
    compact model's MAC count differs from the masked budget.
    """
    rng = rng or np.random.default_rng(0)
    images = rng.uniform(-1.0, 1.0, size=(
        n_trials, spec.image_size, spec.image_size, spec.channels)
    ).astype(np.float32)
    tensor_masks = const_masks(masks)
    masked = forward_model(images, spec, params, tensor_masks,
                           reweight_on=reweight_on).data
    compacted = forward_model(images, compact_spec, compact_params, None,
                              reweight_on=reweight_on).data
    deviation = float(np.abs(masked - compacted).max())
    agreement = float((masked.argmax(axis=1) == compacted.argmax(axis=1)).mean())

    macs_masked = compute_macs(spec, masks).total
    macs_compact = compute_macs(compact_spec).total
    if macs_compact != macs_masked:
        raise EquivalenceError(
            f"compact model MACs {macs_compact} != masked budget {macs_masked}"
        )
    if deviation > tol:
        raise EquivalenceError(
            f"logit deviation {deviation:.3e} exceeds {tol:.1e}; "
            f"first divergence at {_first_divergence(spec, params, tensor_masks, compact_spec, compact_params, images, tol, reweight_on)}"
        )
    return {
        "trials": n_trials,
        "max_abs_deviation": deviation,
        "argmax_agreement": agreement,
        "macs": macs_compact,
    }


def _first_divergence(spec, params, tensor_masks, compact_spec, compact_params,
                      images, tol, reweight_on):
    probe = images[: min(16, len(images))]
    blocks_a, blocks_b = [], []
    forward_model(probe, spec, params, tensor_masks, reweight_on=reweight_on,
                  capture_blocks=blocks_a)
    forward_model(probe, compact_spec, compact_params, None,
                  reweight_on=reweight_on, capture_blocks=blocks_b)
    for i, (a, b) in enumerate(zip(blocks_a, blocks_b)):
        if float(np.abs(a - b).max()) > tol:
            return f"block {i} ({spec.blocks[i].kind} attention)"
    return "classifier head"
