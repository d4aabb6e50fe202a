"""Independent reference implementations used as test oracles.

Everything here is deliberately naive (triple loops, direct formulas,
float64) and never shares code with the library paths it checks.
"""

import numpy as np


def matmul_triple_loop(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m, k = a.shape
    k2, p = b.shape
    assert k == k2
    out = np.zeros((m, p))
    for i in range(m):
        for j in range(p):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def softmax_direct(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def attention_original_naive(x, wq, wk, wv, wo, heads):
    """Per-head loop reference for one image (tokens, channels), float64."""
    x = np.asarray(x, dtype=np.float64)
    q = x @ np.asarray(wq, dtype=np.float64)
    k = x @ np.asarray(wk, dtype=np.float64)
    v = x @ np.asarray(wv, dtype=np.float64)
    cq = q.shape[1] // heads
    cv = v.shape[1] // heads
    outs = []
    for h in range(heads):
        qh = q[:, h * cq:(h + 1) * cq]
        kh = k[:, h * cq:(h + 1) * cq]
        vh = v[:, h * cv:(h + 1) * cv]
        scores = qh @ kh.T / np.sqrt(cq)
        outs.append(softmax_direct(scores) @ vh)
    return np.concatenate(outs, axis=1) @ np.asarray(wo, dtype=np.float64)


def linear_attention_naive(q, k, v, feat_eps=1e-6, norm_eps=1e-6):
    """Single-head kernelized attention reference, float64."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    fq = np.maximum(q, 0) + feat_eps
    fk = np.maximum(k, 0) + feat_eps
    numer = fq @ (fk.T @ v)
    denom = fq @ fk.sum(axis=0)[:, None] + norm_eps
    return numer / denom


def finite_difference(f, x, h=1e-3):
    """Central differences of a scalar function over every coordinate of x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    xf = x.reshape(-1)
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + h
        fp = f(x)
        xf[i] = orig - h
        fm = f(x)
        xf[i] = orig
        flat[i] = (fp - fm) / (2 * h)
    return grad


def assert_close(actual, expected, rtol=1e-3, atol=1e-6, label=""):
    actual = np.asarray(actual, dtype=np.float64)
    expected = np.asarray(expected, dtype=np.float64)
    err = np.abs(actual - expected)
    bound = atol + rtol * np.abs(expected)
    if not (err <= bound).all():
        worst = np.unravel_index(np.argmax(err - bound), err.shape)
        raise AssertionError(
            f"{label} mismatch at {worst}: actual {actual[worst]}, "
            f"expected {expected[worst]}, err {err[worst]:.3e}"
        )
