"""MAC accounting vs the instrumented counter, and the budget loss."""

import numpy as np
import pytest

from headprune.budget import (
    compute_macs,
    mac_loss,
    minimum_masks,
    relaxed_mac_total,
)
from headprune.errors import ContractError
from headprune.model import BlockSpec, ModelSpec, forward_model, init_params
from headprune.numerics import (
    Tape,
    Tensor,
    macs_disable,
    macs_enable,
    macs_read_by_scope,
    straight_through,
)
from headprune.reconfigure import compact, const_masks, plan


@pytest.fixture(autouse=True)
def _counter_off():
    yield
    macs_disable()


def _toy_spec():
    return ModelSpec(image_size=16, patch_size=4, embed_dim=16, num_classes=5,
                     blocks=(BlockSpec("linear", 2, 12),
                             BlockSpec("original", 2, 12)))


def _random_valid_masks(spec, rng):
    """Random bits with equal kept counts per head and >= 1 kept."""
    masks = {}
    for i, blk in enumerate(spec.blocks):
        qk_w, v_w = blk.widths(spec.embed_dim)
        for suffix, width, heads in (("qk", qk_w, blk.heads),
                                     ("v", v_w, blk.heads),
                                     ("ffn", blk.ffn_hidden, 1)):
            ch = width // heads
            keep = int(rng.integers(1, ch + 1))
            bits = np.zeros(width, dtype=np.uint8)
            for h in range(heads):
                chosen = rng.choice(ch, size=keep, replace=False)
                bits[h * ch + chosen] = 1
            masks[f"block{i}.{suffix}"] = bits
    return masks


class TestComputeMacs:
    def test_zero_attention_masks_zero_attention_terms(self):
        spec = _toy_spec()
        masks = {f"block{i}.qk": np.zeros(16, dtype=np.uint8) for i in range(2)}
        masks.update({f"block{i}.v": np.zeros(16, dtype=np.uint8) for i in range(2)})
        report = compute_macs(spec, masks)
        for entry in report.entries:
            if "attn" in entry.label:
                assert entry.macs == 0

    def test_linear_attention_formula_value(self):
        spec = ModelSpec(image_size=16, patch_size=4, embed_dim=8, num_classes=2,
                         blocks=(BlockSpec("linear", 1, 4),))
        report = compute_macs(spec)  # N=16, all 8 channels kept, single head
        assert report.by_label()["block0/attn"] == 16 * 8 * 8 + 16 * 8 * 8

    def test_matches_counter_with_all_ones_masks(self):
        spec = _toy_spec()
        rng = np.random.default_rng(0)
        params = init_params(spec, rng)
        batch = 3
        images = rng.uniform(-1, 1, (batch, 16, 16, 1)).astype(np.float32)
        macs_enable()
        forward_model(images, spec, params)
        scoped = macs_read_by_scope()
        report = compute_macs(spec)
        for entry in report.entries:
            assert scoped[entry.label] == batch * entry.macs, entry.label

    def test_matches_counter_on_compacted_random_masks(self):
        spec = _toy_spec()
        rng = np.random.default_rng(1)
        params = init_params(spec, rng)
        for trial in range(5):
            masks = _random_valid_masks(spec, rng)
            cparams, cspec = compact(params, plan(masks, spec), spec)
            images = rng.uniform(-1, 1, (2, 16, 16, 1)).astype(np.float32)
            macs_enable()
            forward_model(images, cspec, cparams)
            scoped = macs_read_by_scope()
            report = compute_macs(spec, masks)
            for entry in report.entries:
                assert scoped[entry.label] == 2 * entry.macs, (trial, entry.label)

    def test_monotone_under_additional_pruning(self):
        spec = _toy_spec()
        rng = np.random.default_rng(2)
        for _ in range(20):
            masks = _random_valid_masks(spec, rng)
            base = compute_macs(spec, masks).total
            name = rng.choice(list(masks))
            bits = masks[name]
            kept = np.nonzero(bits)[0]
            if len(kept) == 0:
                continue
            bits2 = bits.copy()
            bits2[rng.choice(kept)] = 0
            pruned = dict(masks)
            pruned[name] = bits2
            assert compute_macs(spec, pruned).total <= base

    def test_quadratic_in_keep_fraction_for_linear_model(self):
        spec = ModelSpec(image_size=32, patch_size=4, embed_dim=32, num_classes=2,
                         blocks=(BlockSpec("linear", 1, 32),))
        n = spec.num_tokens

        def attn_at_keep(keep):
            bits = np.zeros(32, dtype=np.uint8)
            bits[:keep] = 1
            masks = {"block0.qk": bits, "block0.v": bits}
            return compute_macs(spec, masks).by_label()["block0/attn"]

        # attention term = n*k*k + n*k*k: exactly quadratic in kept channels
        for keep in (4, 8, 16, 32):
            assert attn_at_keep(keep) == 2 * n * keep * keep

    def test_original_attention_quadratic_in_tokens(self):
        def attn(image_size):
            spec = ModelSpec(image_size=image_size, patch_size=4, embed_dim=16,
                             num_classes=2, blocks=(BlockSpec("original", 2, 8),))
            return (compute_macs(spec).by_label()["block0/attn"],
                    spec.num_tokens)

        small, n_small = attn(16)
        large, n_large = attn(32)
        assert large * n_small ** 2 == small * n_large ** 2

    def test_informational_reweight_excluded_from_total(self):
        spec = _toy_spec()
        report = compute_macs(spec)
        assert report.total == sum(e.macs for e in report.entries)
        assert all("reweight" in e.label for e in report.informational)


class TestRelaxedTotal:
    def test_agrees_with_integer_path_at_binary_masks(self):
        spec = _toy_spec()
        rng = np.random.default_rng(3)
        for _ in range(10):
            masks = _random_valid_masks(spec, rng)
            tensors = const_masks(masks)
            relaxed = float(relaxed_mac_total(spec, tensors).data)
            exact = compute_macs(spec, masks).total
            assert relaxed == pytest.approx(exact, rel=1e-6)

    def test_missing_masks_mean_unpruned(self):
        spec = _toy_spec()
        assert float(relaxed_mac_total(spec, {}).data) == compute_macs(spec).total


class TestMacLoss:
    def test_on_target_is_zero(self):
        assert mac_loss(1000, 1000) == 0.0

    def test_fifty_percent_over(self):
        assert mac_loss(1500, 1000, lam=1.0) == pytest.approx(0.5)

    def test_target_must_be_positive(self):
        with pytest.raises(ContractError):
            mac_loss(10, 0)

    def test_gradient_sign_tracks_budget_direction(self):
        # finite differences of the relaxed count through the loss
        spec = ModelSpec(image_size=16, patch_size=4, embed_dim=8, num_classes=2,
                         blocks=(BlockSpec("linear", 1, 4),))
        full = compute_macs(spec).total

        def loss_grad(target):
            bits = np.ones(8, dtype=np.float64)
            m_star = Tensor(np.full(8, 0.4), dtype=np.float64)
            with Tape() as tape:
                mask = straight_through(m_star, bits)
                loss = mac_loss(relaxed_mac_total(spec, {"block0.qk": mask}),
                                target, 1.0)
            return tape.backward(loss)[m_star]

        over = loss_grad(target=full // 2)   # over budget: keeping costs
        under = loss_grad(target=full * 2)   # under budget: keeping helps
        assert (over > 0).all()
        assert (under < 0).all()


class TestMinimumMasks:
    def test_floor_keeps_one_channel_per_head(self):
        spec = _toy_spec()
        masks = minimum_masks(spec)
        for i, blk in enumerate(spec.blocks):
            assert masks[f"block{i}.qk"].sum() == blk.heads
            assert masks[f"block{i}.v"].sum() == blk.heads
            assert masks[f"block{i}.ffn"].sum() == 1
