"""Channel-contribution identity and the data-driven indicator start."""

import numpy as np

from headprune.numerics import singular_values
from headprune.saliency import (
    channel_contribution,
    initial_indicator,
    normalize_to_indicator,
    spectrum_distances,
)


class TestChannelContribution:
    def test_single_channel_equals_full_product(self):
        rng = np.random.default_rng(0)
        q = rng.standard_normal((6, 1))
        k = rng.standard_normal((6, 1))
        v = rng.standard_normal((6, 5))
        full = q @ k.T @ v
        assert np.abs(channel_contribution(q, k, v, 0) - full).max() <= 1e-12

    def test_zero_query_channel_gives_zero_matrix(self):
        rng = np.random.default_rng(1)
        q = rng.standard_normal((5, 3))
        q[:, 1] = 0.0
        k = rng.standard_normal((5, 3))
        v = rng.standard_normal((5, 4))
        np.testing.assert_array_equal(channel_contribution(q, k, v, 1),
                                      np.zeros((5, 4)))

    def test_contributions_sum_to_full_product(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            n = int(rng.integers(2, 64))
            c = int(rng.integers(2, 64))
            q = rng.standard_normal((n, c))
            k = rng.standard_normal((n, c))
            v = rng.standard_normal((n, c))
            total = sum(channel_contribution(q, k, v, i) for i in range(c))
            full = (q @ k.T) @ v
            denom = max(np.abs(full).max(), 1e-12)
            assert np.abs(total - full).max() / denom <= 1e-5


class TestSpectrumDistances:
    def test_single_channel_distance_is_zero(self):
        rng = np.random.default_rng(3)
        q = rng.standard_normal((1, 6, 1))
        k = rng.standard_normal((1, 6, 1))
        v = rng.standard_normal((1, 6, 1))
        t = spectrum_distances(q, k, v)
        np.testing.assert_allclose(t, 0.0, atol=1e-8)

    def test_zero_channel_distance_is_full_spectrum_mass(self):
        rng = np.random.default_rng(4)
        q = rng.standard_normal((1, 6, 3))
        q[0, :, 2] = 0.0
        k = rng.standard_normal((1, 6, 3))
        v = rng.standard_normal((1, 6, 3))
        t = spectrum_distances(q, k, v)
        kv = k[0].T @ v[0]
        full_spectrum = singular_values(q[0] @ kv)
        np.testing.assert_allclose(t[0, 2], full_spectrum.sum(), rtol=1e-8)

    def test_duplicate_channels_get_equal_distances(self):
        rng = np.random.default_rng(5)
        q = rng.standard_normal((1, 8, 4))
        k = rng.standard_normal((1, 8, 4))
        q[0, :, 3] = q[0, :, 1]
        k[0, :, 3] = k[0, :, 1]
        v = rng.standard_normal((1, 8, 4))
        t = spectrum_distances(q, k, v)
        assert abs(t[0, 1] - t[0, 3]) <= 1e-6

    def test_rank_one_shortcut_matches_iterative_spectra(self):
        # the lone contribution is an outer product; its leading singular
        # value used by the shortcut must agree with the full solver
        rng = np.random.default_rng(6)
        q = rng.standard_normal((8, 5))
        k = rng.standard_normal((8, 5))
        v = rng.standard_normal((8, 5))
        kv = k.T @ v
        full = singular_values(q @ kv)
        t = spectrum_distances(q[None], k[None], v[None])[0]
        for i in range(5):
            spectrum_i = singular_values(np.outer(q[:, i], kv[i]))
            expected = np.abs(full - spectrum_i).sum()
            assert abs(t[i] - expected) <= 1e-6

    def test_scaling_value_scales_distances_and_not_indicator(self):
        rng = np.random.default_rng(7)
        q = rng.standard_normal((2, 8, 5))
        k = rng.standard_normal((2, 8, 5))
        v = rng.standard_normal((2, 8, 5))
        base = spectrum_distances(q, k, v).sum(axis=0)
        scaled = spectrum_distances(q, k, 3.5 * v).sum(axis=0)
        np.testing.assert_allclose(scaled, 3.5 * base, rtol=1e-5)
        np.testing.assert_allclose(normalize_to_indicator(scaled),
                                   normalize_to_indicator(base), atol=1e-6)


class TestNormalizeToIndicator:
    def test_min_max_mapping(self):
        np.testing.assert_allclose(normalize_to_indicator([0.0, 5.0, 10.0]),
                                   [0.0, 0.5, 1.0])

    def test_constant_vector_maps_to_quarter(self):
        np.testing.assert_array_equal(normalize_to_indicator([3.0, 3.0, 3.0]),
                                      [0.25, 0.25, 0.25])

    def test_endpoints_exact(self):
        rng = np.random.default_rng(8)
        m = normalize_to_indicator(rng.uniform(2, 9, 32))
        assert m.min() == 0.0 and m.max() == 1.0


class TestInitialIndicator:
    def test_band_top_matches_degenerate_level(self):
        rng = np.random.default_rng(9)
        m = initial_indicator(rng.uniform(1, 4, 16))
        assert m.max() == 0.25 and m.min() == 0.0
        np.testing.assert_array_equal(initial_indicator([2.0, 2.0]),
                                      [0.25, 0.25])

    def test_preserves_distance_ordering(self):
        rng = np.random.default_rng(10)
        t = rng.uniform(0, 7, 24)
        m = initial_indicator(t)
        np.testing.assert_array_equal(np.argsort(m, kind="stable"),
                                      np.argsort(t, kind="stable"))

    def test_starts_fully_kept_under_any_weight(self):
        # w * m < 0.5 for every w < 2 anywhere in the band
        rng = np.random.default_rng(11)
        m = initial_indicator(rng.uniform(0, 3, 64))
        assert (1.999 * m < 0.5).all()
