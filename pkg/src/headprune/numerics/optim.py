"""Adaptive-moment optimizer with decoupled weight decay."""

from __future__ import annotations

import numpy as np

from ..errors import ContractError


class AdamW:
    """Tracks first/second moment state per named parameter.

    Decay is applied directly to the weights (w <- w * (1 - lr * wd)), not
    folded into the gradient. Parameters named in `no_decay` skip it.
    """

    def __init__(self, betas=(0.9, 0.999), eps=1e-8, no_decay=()):
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.no_decay = set(no_decay)
        self.step_count = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads, lr, weight_decay=0.0):
        """Update `params` (name -> Tensor) in place from `grads` (name -> ndarray)."""
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, param in params.items():
            if name not in grads:
                raise ContractError(f"no gradient for parameter {name!r}")
            g = np.asarray(grads[name], dtype=np.float64)
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            mhat = m / bc1
            vhat = v / bc2
            w = param.data.astype(np.float64)
            if weight_decay and name not in self.no_decay:
                w = w * (1.0 - lr * weight_decay)
            w = w - lr * mhat / (np.sqrt(vhat) + self.eps)
            param.data = w.astype(param.data.dtype)

    def state_tensors(self):
        """Snapshot of optimizer state as named f32 arrays (for checkpoints)."""
        out = {"opt.step": np.asarray([self.step_count], dtype=np.float32)}
        for name, m in self.m.items():
            out[f"opt.m.{name}"] = m.astype(np.float32)
            out[f"opt.v.{name}"] = self.v[name].astype(np.float32)
        return out


def cosine_lr(step, total_steps, start, end):
    """Cosine decay from `start` to `end` over `total_steps` optimizer steps."""
    if total_steps <= 1:
        return end
    frac = min(max(step / (total_steps - 1), 0.0), 1.0)
    return end + 0.5 * (start - end) * (1.0 + np.cos(np.pi * frac))
