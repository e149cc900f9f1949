"""Parameterized building blocks: linear maps, layer norm, attention.

Weights are initialized N(0, 0.02), biases and norm offsets at zero, norm
gains at one.  A module's parameters are discovered by reflection over its
attributes, so construction order fixes the (deterministic) parameter order.
"""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor

INIT_STD = 0.02
MASK_OFF = -1e9  # additive attention mask; finite so the NaN guard stays quiet


class Module:
    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            if isinstance(value, Tensor):
                yield prefix + key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{key}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def param_dict(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        own = self.param_dict()
        if set(own) != set(state):
            missing = set(own) ^ set(state)
            raise ShapeError(f"parameter name mismatch while loading state: {sorted(missing)}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.data.shape:
                raise ShapeError(f"parameter {name!r}: stored shape {arr.shape} != model shape {p.data.shape}")
            p.data = arr.astype(p.data.dtype, copy=True)

    def set_requires_grad(self, flag: bool) -> None:
        for _, p in self.named_parameters():
            p.requires_grad = flag
            if not flag:
                p.grad = None

    def zero_grad(self) -> None:
        for _, p in self.named_parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def _weight(rng: np.random.Generator, shape, dtype) -> Tensor:
    return Tensor(rng.normal(0.0, INIT_STD, size=shape).astype(dtype), requires_grad=True)


def _zeros(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype=np.float32, bias: bool = True):
        self.weight = _weight(rng, (d_in, d_out), dtype)
        if bias:
            self.bias = _zeros((d_out,), dtype)
        else:
            self.bias = None

    def __call__(self, x: Tensor) -> Tensor:
        out = T.matmul(x, self.weight)
        return out + self.bias if self.bias is not None else out


class Embedding(Module):
    def __init__(self, n_rows: int, d: int, rng: np.random.Generator, dtype=np.float32):
        self.weight = _weight(rng, (n_rows, d), dtype)

    def __call__(self, ids: np.ndarray) -> Tensor:
        return T.embedding(self.weight, ids)


class LayerNorm(Module):
    def __init__(self, d: int, dtype=np.float32, eps: float = 1e-5):
        self.gain = Tensor(np.ones(d, dtype=dtype), requires_grad=True)
        self.bias = _zeros((d,), dtype)
        self._eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias, eps=self._eps)


class FeedForward(Module):
    def __init__(self, d: int, d_hidden: int, rng: np.random.Generator, dtype=np.float32):
        self.lift = Linear(d, d_hidden, rng, dtype)
        self.drop = Linear(d_hidden, d, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.drop(T.relu(self.lift(x)))


def attention_mask(
    batch: int,
    n_queries: int,
    n_keys: int,
    key_mask: np.ndarray | None,
    causal: bool,
    dtype,
) -> np.ndarray | None:
    """Additive [batch, n_queries, n_keys] mask; 0 keeps, MASK_OFF hides."""
    if key_mask is None and not causal:
        return None
    m = np.zeros((batch, n_queries, n_keys), dtype=dtype)
    if key_mask is not None:
        m += np.where(key_mask[:, None, :], 0.0, MASK_OFF).astype(dtype)
    if causal:
        tri = np.triu(np.full((n_queries, n_keys), MASK_OFF, dtype=dtype), k=1)
        m += tri[None, :, :]
    return m


class MultiHeadAttention(Module):
    """Scaled dot-product attention over h heads with additive key masking."""

    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator, dtype=np.float32):
        if d_model % n_heads != 0:
            raise ShapeError(f"n_heads {n_heads} must divide d_model {d_model}")
        self.project_q = Linear(d_model, d_model, rng, dtype)
        # a key-projection bias shifts every logit of a query by the same
        # amount, which softmax cancels exactly; omit the inert parameter
        self.project_k = Linear(d_model, d_model, rng, dtype, bias=False)
        self.project_v = Linear(d_model, d_model, rng, dtype)
        self.project_out = Linear(d_model, d_model, rng, dtype)
        self._heads = n_heads
        self._d_model = d_model

    def _split(self, x: Tensor, batch: int, length: int) -> Tensor:
        dh = self._d_model // self._heads
        x = T.reshape(x, (batch, length, self._heads, dh))
        x = T.transpose(x, (0, 2, 1, 3))
        return T.reshape(x, (batch * self._heads, length, dh))

    def __call__(
        self,
        query: Tensor,
        key: Tensor,
        value: Tensor,
        key_mask: np.ndarray | None = None,
        causal: bool = False,
    ) -> Tensor:
        b, tq, d = query.shape
        tk = key.shape[1]
        if key.shape[0] != b or value.shape[0] != b:
            raise ShapeError(f"attention batch mismatch: {query.shape} vs {key.shape} vs {value.shape}")
        dh = d // self._heads
        q = self._split(self.project_q(query), b, tq)
        k = self._split(self.project_k(key), b, tk)
        v = self._split(self.project_v(value), b, tk)
        scores = T.matmul(q, T.transpose(k, (0, 2, 1))) * (1.0 / np.sqrt(dh))
        mask = attention_mask(b, tq, tk, key_mask, causal, query.data.dtype)
        if mask is not None:
            scores = scores + np.repeat(mask, self._heads, axis=0)
        weights = T.softmax(scores, axis=-1)
        mixed = T.matmul(weights, v)
        mixed = T.reshape(mixed, (b, self._heads, tq, dh))
        mixed = T.transpose(mixed, (0, 2, 1, 3))
        mixed = T.reshape(mixed, (b, tq, d))
        return self.project_out(mixed)
