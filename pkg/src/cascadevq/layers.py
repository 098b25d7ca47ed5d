"""Transformer building blocks and the adaptive-moment optimizer.

Everything operates on the autodiff ``Var`` type; parameter containers are
plain lists of Vars so checkpoints can flatten them by name.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Var


def init_linear(rng: np.random.Generator, fan_in: int, fan_out: int,
                scale: float | None = None) -> Var:
    if scale is None:
        scale = 1.0 / np.sqrt(fan_in)
    return ad.parameter(rng.normal(0.0, scale, size=(fan_in, fan_out)))


def init_bias(fan_out: int) -> Var:
    return ad.parameter(np.zeros(fan_out))


class TransformerBlock:
    """Pre-norm attention + position-wise feed-forward with residuals."""

    def __init__(self, rng: np.random.Generator, width: int, n_heads: int,
                 ffn_mult: int = 2):
        self.n_heads = n_heads
        self.wq = init_linear(rng, width, width)
        self.wk = init_linear(rng, width, width)
        self.wv = init_linear(rng, width, width)
        self.wo = init_linear(rng, width, width)
        self.ln1_g = ad.parameter(np.ones(width))
        self.ln1_b = init_bias(width)
        self.ln2_g = ad.parameter(np.ones(width))
        self.ln2_b = init_bias(width)
        self.ff1 = init_linear(rng, width, ffn_mult * width)
        self.ff1_b = init_bias(ffn_mult * width)
        self.ff2 = init_linear(rng, ffn_mult * width, width)
        self.ff2_b = init_bias(width)

    def params(self) -> list[Var]:
        return [self.wq, self.wk, self.wv, self.wo,
                self.ln1_g, self.ln1_b, self.ln2_g, self.ln2_b,
                self.ff1, self.ff1_b, self.ff2, self.ff2_b]

    def __call__(self, x: Var, mask: np.ndarray) -> Var:
        h = ad.layer_norm(x, self.ln1_g, self.ln1_b)
        x = x + ad.attention(h, mask, self.wq, self.wk, self.wv, self.wo,
                             self.n_heads)
        h = ad.layer_norm(x, self.ln2_g, self.ln2_b)
        return x + ad.relu(h @ self.ff1 + self.ff1_b) @ self.ff2 + self.ff2_b


class Adam:
    """Adaptive-moment gradient descent on a fixed parameter list."""

    def __init__(self, params: list[Var], lr: float = 2e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        if self.lr == 0.0:
            return
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            mhat = self.m[i] / (1 - b1 ** self.t)
            vhat = self.v[i] / (1 - b2 ** self.t)
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)


class GradientAscent:
    """Plain fixed-step gradient ascent (used by test-time refinement)."""

    def __init__(self, params: list[Var], step: float):
        self.params = params
        self.step = step

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def ascend(self):
        for p in self.params:
            if p.grad is not None:
                p.data = p.data + self.step * p.grad
