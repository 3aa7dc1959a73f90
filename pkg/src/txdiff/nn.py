"""Small layer library and Adam on top of :mod:`txdiff.autodiff`."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Module:
    """Parameter container; parameters are discovered from attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for k, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{k}.")

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], prefix: str = "") -> None:
        params = self.parameters()
        missing = [k for k in params if prefix + k not in state]
        if missing:
            raise KeyError(f"missing parameters: {missing[:5]}")
        for k, p in params.items():
            value = np.asarray(state[prefix + k], dtype=np.float64)
            if value.shape != p.shape:
                raise ad.ShapeMismatch(f"{k}: expected {p.shape}, got {value.shape}")
            p.data = value.copy()

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters().values())


def param(array) -> Tensor:
    return Tensor(np.asarray(array, dtype=np.float64), requires_grad=True)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, zero: bool = False, bias: bool = True):
        scale = 0.0 if zero else 1.0 / math.sqrt(d_in)
        self.weight = param(rng.normal(size=(d_in, d_out)) * scale)
        self.bias = param(np.zeros(d_out)) if bias else None

    def __call__(self, x) -> Tensor:
        out = ad.matmul(x, self.weight)
        return out + self.bias if self.bias is not None else out


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gain = param(np.ones(d))
        self.shift = param(np.zeros(d))
        self.eps = eps

    def __call__(self, x) -> Tensor:
        return ad.layernorm(x, -1, self.eps) * self.gain + self.shift


class MultiHeadAttention(Module):
    """Scaled dot-product attention over ``(batch, tokens, d)`` inputs."""

    def __init__(self, d: int, heads: int, rng: np.random.Generator, zero_out: bool = False):
        if d % heads:
            raise ValueError("d must be divisible by heads")
        self.heads = heads
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.out = Linear(d, d, rng, zero=zero_out)

    def _split(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        return ad.transpose(x.reshape(b, n, self.heads, d // self.heads), (0, 2, 1, 3))

    def __call__(self, x, context=None, bias=None, key_mask=None) -> Tensor:
        """``bias``: additive logits ``(batch, heads, n, m)``; ``key_mask``: ``(batch, m)`` True = attend."""
        context = x if context is None else context
        b, n, d = x.shape
        q = self._split(self.q(x))
        k = self._split(self.k(context))
        v = self._split(self.v(context))
        scores = ad.matmul(q, ad.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(d // self.heads))
        if bias is not None:
            scores = scores + bias
        if key_mask is not None:
            scores = ad.masked_fill(scores, ~np.asarray(key_mask, bool)[:, None, None, :], -1e9)
        attn = ad.softmax(scores, axis=-1)
        mixed = ad.transpose(ad.matmul(attn, v), (0, 2, 1, 3)).reshape(b, n, d)
        return self.out(mixed)


class FeedForward(Module):
    def __init__(self, d: int, hidden: int, rng: np.random.Generator, zero_out: bool = False):
        self.inner = Linear(d, hidden, rng)
        self.outer = Linear(hidden, d, rng, zero=zero_out)

    def __call__(self, x) -> Tensor:
        return self.outer(ad.relu(self.inner(x)))


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float = 2e-4, betas=(0.9, 0.999), eps: float = 1e-8,
                 grad_clip: float | None = None):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.grad_clip = grad_clip
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.t += 1
        scale = 1.0
        if self.grad_clip is not None:
            norm = math.sqrt(sum(float((p.grad ** 2).sum()) for p in self.params.values() if p.grad is not None))
            if norm > self.grad_clip:
                scale = self.grad_clip / norm
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad * scale
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            p.data -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {"adam.t": np.array([float(self.t)])}
        for k in self.params:
            out[f"adam.m.{k}"] = self.m[k].copy()
            out[f"adam.v.{k}"] = self.v[k].copy()
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        self.t = int(state["adam.t"][0])
        for k in self.params:
            self.m[k] = np.array(state[f"adam.m.{k}"], dtype=np.float64)
            self.v[k] = np.array(state[f"adam.v.{k}"], dtype=np.float64)
