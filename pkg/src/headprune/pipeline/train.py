"""Search, refine, reconfigure, eval, and inspect over checkpointed state.

Search trains both the network weights and the per-layer pruning
indicators under cross-entropy plus the MAC budget penalty; masks are
refreshed from the live similarity structure every optimizer step. Refine
freezes the masks and recovers accuracy with weights only. Reconfigure
physically compacts the network.

One training thread owns all mutable state; evaluation works on immutable
snapshots.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from ..budget import compute_macs, mac_loss, minimum_masks, relaxed_mac_total
from ..errors import ConfigError, ContractError
from ..model import forward_model, cross_entropy, init_params
from ..numerics import AdamW, Tape, Tensor, cosine_lr, singular_values
from ..pruning import (
    DEFAULT_INDICATOR,
    PrunableLayer,
    kept_per_head,
    layer_similarity_weights,
    mask_tensor,
    refresh,
)
from ..reconfigure import compact, const_masks, plan
from ..saliency import accumulate_distances, initial_indicator, linear_block_ids
from .checkpoint import Checkpoint
from .config import RunConfig
from .data import gen_dataset, read_dataset, to_float

log = logging.getLogger("headprune.train")


def build_prunable_layers(spec, indicator=DEFAULT_INDICATOR):
    """One indicator per prunable structure: shared q/k columns, v columns,
    and FFN hidden channels. Residual and output dimensions stay untouched."""
    layers = {}
    for i, blk in enumerate(spec.blocks):
        qk_w, v_w = blk.widths(spec.embed_dim)
        p = f"block{i}."
        layers[p + "qk"] = PrunableLayer(
            name=p + "qk", param_names=[p + "q", p + "k"], heads=blk.heads,
            out_channels=qk_w,
            indicator=Tensor(np.full(qk_w, indicator, dtype=np.float32)))
        layers[p + "v"] = PrunableLayer(
            name=p + "v", param_names=[p + "v"], heads=blk.heads,
            out_channels=v_w,
            indicator=Tensor(np.full(v_w, indicator, dtype=np.float32)))
        layers[p + "ffn"] = PrunableLayer(
            name=p + "ffn", param_names=[p + "ffn1"], heads=1,
            out_channels=blk.ffn_hidden,
            indicator=Tensor(np.full(blk.ffn_hidden, indicator, dtype=np.float32)))
    return layers


def load_splits(cfg):
    """(train_images f32, train_labels, eval_images f32, eval_labels)."""
    ds = cfg.dataset
    if ds.kind == "synthetic":
        tr_img, tr_lab = gen_dataset(ds.seed, ds.train_count, ds.classes)
        ev_img, ev_lab = gen_dataset(ds.seed + 1, ds.eval_count, ds.classes)
    else:
        tr_img, tr_lab, _ = read_dataset(ds.train_path)
        ev_img, ev_lab, _ = read_dataset(ds.eval_path)
    return (to_float(tr_img), tr_lab.astype(np.int64),
            to_float(ev_img), ev_lab.astype(np.int64))


def _accuracy(spec, params, masks_t, images, labels, batch_size, reweight_on):
    if len(images) == 0:
        return 0.0
    correct = 0
    for lo in range(0, len(images), batch_size):
        logits = forward_model(images[lo:lo + batch_size], spec, params, masks_t,
                               reweight_on=reweight_on).data
        correct += int((logits.argmax(axis=1) == labels[lo:lo + batch_size]).sum())
    return correct / len(images)


def _bit_masks(layers):
    return {name: layer.mask.copy() for name, layer in layers.items()}


def _refresh_all(layers, params, cfg):
    for layer in layers.values():
        refresh(layer, params, cfg.tau,
                similarity_on=cfg.ablation.similarity_weight,
                adjust_on=cfg.ablation.multihead_adjust)


def _run_indicator_init(cfg, spec, params, layers, train_images, rng):
    block_ids = linear_block_ids(spec)
    if not block_ids:
        return None
    budget_n = min(cfg.init_batches * cfg.init_batch_size, len(train_images))
    chosen = rng.permutation(len(train_images))[:budget_n]
    totals, count = accumulate_distances(
        spec, params, train_images[chosen], cfg.init_batch_size,
        reweight_on=cfg.ablation.reweight)
    report = {}
    for i, t in totals.items():
        name = f"block{i}.qk"
        m = initial_indicator(t)
        layers[name].indicator = Tensor(m.astype(np.float32))
        report[name] = {"indicator": m.tolist(), "images": count}
    _refresh_all(layers, params, cfg)
    for name in report:
        kept = kept_per_head(layers[name].mask, layers[name].heads).tolist()
        report[name]["kept_per_head"] = kept
        log.info("indicator init %s: kept per head %s", name, kept)
    return report


def search(config):
    """Run the pruning search; returns (searched Checkpoint, epoch history)."""
    cfg = config
    cfg.validate()
    spec = cfg.model
    rng = np.random.default_rng(cfg.seed)
    params = init_params(spec, rng)
    layers = build_prunable_layers(spec)

    full = compute_macs(spec).total
    floor = compute_macs(spec, minimum_masks(spec)).total
    m_target = int(round(cfg.rho_target * full))
    if m_target < floor:
        raise ConfigError(
            f"rho_target {cfg.rho_target} asks for {m_target} MACs, below the "
            f"one-channel-per-head floor {floor}"
        )

    train_images, train_labels, eval_images, eval_labels = load_splits(cfg)
    init_report = None
    if cfg.ablation.indicator_init:
        init_report = _run_indicator_init(cfg, spec, params, layers,
                                          train_images, rng)
    _refresh_all(layers, params, cfg)

    trainable = dict(params)
    for name, layer in layers.items():
        trainable["ind." + name] = layer.indicator
    no_decay = set() if cfg.decay_indicators else {
        "ind." + name for name in layers}
    opt = AdamW(no_decay=no_decay)

    steps_per_epoch = max(1, math.ceil(len(train_images) / cfg.batch_size))
    total_steps = max(1, cfg.epochs_search * steps_per_epoch)
    step = 0
    history = []
    for epoch in range(cfg.epochs_search):
        order = rng.permutation(len(train_images))
        ce_sum = 0.0
        pen_last = 0.0
        for lo in range(0, len(order), cfg.batch_size):
            batch = order[lo:lo + cfg.batch_size]
            _refresh_all(layers, params, cfg)
            with Tape() as tape:
                mask_tensors = {name: mask_tensor(layer)
                                for name, layer in layers.items()}
                logits = forward_model(train_images[batch], spec, params,
                                       mask_tensors,
                                       reweight_on=cfg.ablation.reweight)
                ce = cross_entropy(logits, train_labels[batch])
                penalty = mac_loss(relaxed_mac_total(spec, mask_tensors),
                                   m_target, cfg.lam)
                loss = ce + penalty
            grads = tape.backward(loss)
            gmap = {}
            for name, p in params.items():
                g = grads.get(p)
                gmap[name] = g if g is not None else np.zeros_like(p.data)
            for name, layer in layers.items():
                g = grads.get(layer.indicator)
                # Keeping happens below the threshold, so kept-ness falls as
                # the indicator rises: descend along the negated pass-through
                # gradient or the budget could only ever un-prune.
                gmap["ind." + name] = -g if g is not None else np.zeros_like(
                    layer.indicator.data)
            opt.step(trainable, gmap,
                     lr=cosine_lr(step, total_steps, cfg.lr_start, cfg.lr_end),
                     weight_decay=cfg.weight_decay_search)
            step += 1
            ce_sum += float(ce.data) * len(batch)
            pen_last = float(penalty.data)
        _refresh_all(layers, params, cfg)
        bits = _bit_masks(layers)
        report = compute_macs(spec, bits, target=m_target)
        report.loss = mac_loss(report.total, m_target, cfg.lam)
        acc = _accuracy(spec, params, const_masks(bits), eval_images, eval_labels,
                        cfg.batch_size, cfg.ablation.reweight)
        entry = {"epoch": epoch, "ce": ce_sum / len(train_images),
                 "mac_penalty": pen_last, "m_prune": report.total,
                 "m_target": m_target, "accuracy": acc}
        history.append(entry)
        log.info("search epoch %d: ce %.4f, macs %d/%d, eval acc %.4f",
                 epoch, entry["ce"], report.total, m_target, acc)

    tensors = {}
    for name, p in params.items():
        tensors["param." + name] = p.data.astype(np.float32, copy=True)
    for name, layer in layers.items():
        tensors["ind." + name] = layer.indicator.data.astype(np.float32, copy=True)
        tensors["mask." + name] = layer.mask.astype(np.uint8, copy=True)
    tensors.update(opt.state_tensors())
    ckpt = Checkpoint(phase="searched", config=cfg.to_dict(), tensors=tensors)
    if init_report is not None:
        history.insert(0, {"indicator_init": init_report})
    return ckpt, history


def _load_state(ckpt):
    cfg = RunConfig.from_dict(ckpt.config)
    params = {name: Tensor(arr.copy()) for name, arr in ckpt.group("param.").items()}
    masks = {name: arr.copy() for name, arr in ckpt.group("mask.").items()}
    indicators = {name: arr.copy() for name, arr in ckpt.group("ind.").items()}
    return cfg, params, masks, indicators


def refine(ckpt):
    """Frozen-mask weight recovery; returns (refined Checkpoint, history).

    With zero refine epochs the checkpoint passes through untouched except
    for its phase tag.
    """
    ckpt.require_phase("searched")
    cfg, params, masks, indicators = _load_state(ckpt)
    history = []
    tensors = dict(ckpt.tensors)
    if cfg.epochs_refine > 0:
        rng = np.random.default_rng(cfg.seed + 7919)
        train_images, train_labels, eval_images, eval_labels = load_splits(cfg)
        masks_t = const_masks(masks)
        opt = AdamW()
        steps_per_epoch = max(1, math.ceil(len(train_images) / cfg.batch_size))
        total_steps = max(1, cfg.epochs_refine * steps_per_epoch)
        step = 0
        for epoch in range(cfg.epochs_refine):
            order = rng.permutation(len(train_images))
            ce_sum = 0.0
            for lo in range(0, len(order), cfg.batch_size):
                batch = order[lo:lo + cfg.batch_size]
                with Tape() as tape:
                    logits = forward_model(train_images[batch], cfg.model, params,
                                           masks_t,
                                           reweight_on=cfg.ablation.reweight)
                    ce = cross_entropy(logits, train_labels[batch])
                grads = tape.backward(ce)
                gmap = {name: grads.get(p, np.zeros_like(p.data))
                        for name, p in params.items()}
                opt.step(params, gmap,
                         lr=cosine_lr(step, total_steps, cfg.lr_start, cfg.lr_end),
                         weight_decay=cfg.weight_decay_refine)
                step += 1
                ce_sum += float(ce.data) * len(batch)
            acc = _accuracy(cfg.model, params, masks_t, eval_images, eval_labels,
                            cfg.batch_size, cfg.ablation.reweight)
            entry = {"epoch": epoch, "ce": ce_sum / len(train_images),
                     "accuracy": acc}
            history.append(entry)
            log.info("refine epoch %d: ce %.4f, eval acc %.4f",
                     epoch, entry["ce"], acc)
        tensors = {k: v for k, v in tensors.items() if not k.startswith("opt.")}
        for name, p in params.items():
            tensors["param." + name] = p.data.astype(np.float32, copy=True)
        tensors.update(opt.state_tensors())
    return Checkpoint(phase="refined", config=ckpt.config, tensors=tensors), history


def reconfigure_checkpoint(ckpt):
    """Physically remove masked channels; returns the compacted Checkpoint."""
    ckpt.require_phase("refined")
    cfg, params, masks, _ = _load_state(ckpt)
    cplan = plan(masks, cfg.model)
    cparams, cspec = compact(params, cplan, cfg.model)
    config = dict(ckpt.config)
    config["model"] = cspec.to_dict()
    tensors = {"param." + name: p.data.astype(np.float32, copy=True)
               for name, p in cparams.items()}
    return Checkpoint(phase="compacted", config=config, tensors=tensors)


def evaluate_checkpoint(ckpt, data_path=None, f64=False):
    """(top-1 accuracy on the eval split, BudgetReport)."""
    cfg, params, masks, _ = _load_state(ckpt)
    if data_path is not None:
        images, labels, _ = read_dataset(data_path)
        images, labels = to_float(images), labels.astype(np.int64)
    else:
        _, _, images, labels = load_splits(cfg)
    dtype = np.float64 if f64 else np.float32
    if f64:
        params = {k: Tensor(v.data.astype(np.float64)) for k, v in params.items()}
    masks_t = const_masks(masks, dtype) if masks else None
    acc = _accuracy(cfg.model, params, masks_t, images, labels,
                    cfg.batch_size, cfg.ablation.reweight)
    report = compute_macs(cfg.model, masks if masks else None)
    return acc, report


def inspect_checkpoint(ckpt, top=3):
    """Spectral and structural diagnostics for every attention layer."""
    cfg, params, masks, _ = _load_state(ckpt)
    spec = cfg.model
    out = {"phase": ckpt.phase, "layers": [], "kept": {}, "weight_histograms": {}}
    for i, blk in enumerate(spec.blocks):
        qk_w, v_w = blk.widths(spec.embed_dim)
        for proj, width, mask_name in (("q", qk_w, f"block{i}.qk"),
                                       ("k", qk_w, f"block{i}.qk"),
                                       ("v", v_w, f"block{i}.v")):
            w = params[f"block{i}.{proj}"].data.astype(np.float64)
            bits = masks.get(mask_name)
            if bits is not None:
                w = w * bits
            ch = width // blk.heads
            norms = []
            for h in range(blk.heads):
                sv = singular_values(w[:, h * ch:(h + 1) * ch])
                norms.append(float(np.sqrt((sv[:top] ** 2).sum())))
            out["layers"].append({"block": i, "kind": blk.kind, "proj": proj,
                                  "top_sv_norms": norms})
    for i, blk in enumerate(spec.blocks):
        for suffix, width, heads in (("qk", blk.widths(spec.embed_dim)[0], blk.heads),
                                     ("v", blk.widths(spec.embed_dim)[1], blk.heads),
                                     ("ffn", blk.ffn_hidden, 1)):
            name = f"block{i}.{suffix}"
            bits = masks.get(name)
            if bits is None:
                kept = [width // heads] * heads
            else:
                kept = kept_per_head(bits, heads).tolist()
            out["kept"][name] = kept
            pname = {"qk": "q", "v": "v", "ffn": "ffn1"}[suffix]
            weights = layer_similarity_weights(params[f"block{i}.{pname}"].data,
                                               heads)
            hist, _ = np.histogram(weights, bins=10, range=(1.0, 2.0))
            out["weight_histograms"][name] = hist.tolist()
    return out


def state_for_verification(ckpt):
    """(spec, params, masks, reweight flag) for equivalence checks."""
    cfg, params, masks, _ = _load_state(ckpt)
    if ckpt.phase != "compacted" and not masks:
        raise ContractError("checkpoint has no masks to verify against")
    return cfg.model, params, masks, cfg.ablation.reweight
