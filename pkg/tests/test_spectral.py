"""Jacobi singular values against diagonal cases and a LAPACK oracle."""

import numpy as np
import pytest

from headprune.errors import NumericsError
from headprune.numerics import singular_values, singular_values_batch


def test_diagonal_matrix():
    np.testing.assert_allclose(singular_values(np.diag([3.0, 1.0])), [3.0, 1.0],
                               atol=1e-12)


def test_zero_matrix():
    np.testing.assert_array_equal(singular_values(np.zeros((4, 3))), np.zeros(3))


def test_random_matrix_frobenius_identity_and_oracle():
    rng = np.random.default_rng(42)
    a = rng.standard_normal((6, 4))
    sv = singular_values(a)
    frob = (a * a).sum()
    assert abs((sv ** 2).sum() - frob) / frob <= 1e-5
    ref = np.linalg.svd(a, compute_uv=False)
    np.testing.assert_allclose(sv, ref, rtol=1e-5, atol=1e-8)


def test_wide_matrix_uses_smaller_gram():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((3, 9))
    np.testing.assert_allclose(singular_values(a),
                               np.linalg.svd(a, compute_uv=False),
                               rtol=1e-8, atol=1e-10)


def test_nonincreasing_and_nonnegative():
    rng = np.random.default_rng(2)
    for _ in range(10):
        sv = singular_values(rng.standard_normal((8, 5)))
        assert (sv >= 0).all()
        assert (np.diff(sv) <= 1e-12).all()


def test_permutation_invariance():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((7, 5))
    sv = singular_values(a)
    rperm = rng.permutation(7)
    cperm = rng.permutation(5)
    sv_p = singular_values(a[rperm][:, cperm])
    assert np.abs(sv - sv_p).max() <= 1e-6


def test_rank_one_spectrum():
    u = np.array([1.0, 2.0, -1.0])
    v = np.array([0.5, 0.5, 1.0, -2.0])
    sv = singular_values(np.outer(u, v))
    np.testing.assert_allclose(sv[0], np.linalg.norm(u) * np.linalg.norm(v),
                               rtol=1e-10)
    np.testing.assert_allclose(sv[1:], 0.0, atol=1e-8)


def test_batch_matches_single():
    rng = np.random.default_rng(4)
    stack = rng.standard_normal((5, 6, 4))
    batch = singular_values_batch(stack)
    for i in range(5):
        np.testing.assert_allclose(batch[i], singular_values(stack[i]),
                                   rtol=1e-10, atol=1e-12)


def test_nonconvergence_carries_residual():
    # one sweep cannot diagonalize a generic matrix; the error must carry
    # the remaining off-diagonal magnitude
    rng = np.random.default_rng(5)
    a = rng.standard_normal((8, 8))
    with pytest.raises(NumericsError) as exc:
        singular_values(a, max_sweeps=1)
    assert exc.value.residual is not None
    assert exc.value.residual > 0


def test_default_budget_converges_on_large_batches():
    rng = np.random.default_rng(6)
    stack = rng.standard_normal((16, 32, 24)) * 100.0
    out = singular_values_batch(stack)
    assert out.shape == (16, 24)
    assert np.isfinite(out).all()
