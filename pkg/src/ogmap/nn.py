"""Tiny neural building blocks with hand-written backward passes.

One MLP shape serves all three decoders: out = W2 @ relu(W1 @ x + b1) + b2
with a 32-unit hidden layer. Forward passes are batched over rows and return
a cache; backward consumes the cache and the upstream gradient and produces
parameter gradients plus the input gradient. Everything follows the dtype of
its inputs, so the same code runs the float32 production path and the
float64 gradient-check path.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

log = logging.getLogger(__name__)

HIDDEN_DIM = 32


@dataclass
class MlpGrads:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


class Mlp:
    """Two-layer perceptron with ReLU, weights stored as (out, in) matrices."""

    def __init__(self, w1: np.ndarray, b1: np.ndarray, w2: np.ndarray, b2: np.ndarray):
        self.w1, self.b1, self.w2, self.b2 = w1, b1, w2, b2

    @classmethod
    def create(
        cls,
        rng: np.random.Generator,
        d_in: int,
        d_out: int,
        hidden: int = HIDDEN_DIM,
        dtype=np.float32,
    ) -> "Mlp":
        """Kaiming-uniform weights (bound sqrt(6 / fan_in)), zero biases."""
        b1 = np.sqrt(6.0 / d_in)
        b2 = np.sqrt(6.0 / hidden)
        w1 = rng.uniform(-b1, b1, size=(hidden, d_in)).astype(dtype)
        w2 = rng.uniform(-b2, b2, size=(d_out, hidden)).astype(dtype)
        return cls(w1, np.zeros(hidden, dtype=dtype), w2, np.zeros(d_out, dtype=dtype))

    @property
    def d_in(self) -> int:
        return self.w1.shape[1]

    @property
    def d_out(self) -> int:
        return self.w2.shape[0]

    def astype(self, dtype) -> "Mlp":
        return Mlp(*(t.astype(dtype) for t in (self.w1, self.b1, self.w2, self.b2)))

    def forward(self, x: np.ndarray):
        """x (B, d_in) -> (y (B, d_out), cache)."""
        h = x @ self.w1.T + self.b1
        hr = np.maximum(h, 0)
        y = hr @ self.w2.T + self.b2
        return y, (x, h, hr)

    def backward(self, cache, gy: np.ndarray):
        """Upstream gy (B, d_out) -> (MlpGrads, gx (B, d_in))."""
        x, h, hr = cache
        gw2 = gy.T @ hr
        gb2 = gy.sum(axis=0)
        ghr = gy @ self.w2
        gh = ghr * (h > 0)
        gw1 = gh.T @ x
        gb1 = gh.sum(axis=0)
        gx = gh @ self.w1
        return MlpGrads(gw1, gb1, gw2, gb2), gx

    def tensors(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign to stay overflow-free in float32
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def head_forward(raw: np.ndarray, kind: str, base_scale: Optional[np.ndarray] = None):
    """Map raw decoder output to a constrained quantity.

    kind "color" / "opacity": elementwise sigmoid.
    kind "quat": row-normalise (..., 4); an all-zero row falls back to the
        identity rotation (1, 0, 0, 0).
    kind "scale": base_scale * sigmoid(raw), so each axis is bounded by the
        anchor's base scaling.
    Returns (value, cache) where the cache feeds :func:`head_backward`.
    """
    if kind in ("color", "opacity"):
        s = sigmoid(raw)
        return s, (kind, s)
    if kind == "quat":
        norm = np.linalg.norm(raw, axis=-1, keepdims=True)
        zero = norm == 0
        safe = np.where(zero, 1.0, norm)
        q = raw / safe
        if np.any(zero):
            q = np.where(zero, 0.0, q)
            fallback = np.zeros_like(q)
            fallback[..., 0] = 1.0
            q = np.where(zero, fallback, q)
        return q, (kind, q, safe, zero)
    if kind == "scale":
        if base_scale is None:
            raise ValueError("scale head needs base_scale")
        s = sigmoid(raw)
        return base_scale * s, (kind, s, base_scale)
    raise ValueError(f"unknown head kind {kind!r}")


def head_backward(cache, gvalue: np.ndarray) -> np.ndarray:
    kind = cache[0]
    if kind in ("color", "opacity"):
        s = cache[1]
        return gvalue * s * (1.0 - s)
    if kind == "quat":
        _, q, safe, zero = cache
        dot = np.sum(q * gvalue, axis=-1, keepdims=True)
        graw = (gvalue - q * dot) / safe
        if np.any(zero):
            graw = np.where(zero, 0.0, graw)
        return graw
    if kind == "scale":
        _, s, base_scale = cache
        return gvalue * base_scale * s * (1.0 - s)
    raise ValueError(f"unknown head kind {kind!r}")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, shape, dtype=np.float32) -> "AdamState":
        return cls(np.zeros(shape, dtype=dtype), np.zeros(shape, dtype=dtype), 0)

    def append_rows(self, k: int) -> None:
        """Grow first-axis state for k freshly created anchors (zero moments)."""
        pad = [(0, k)] + [(0, 0)] * (self.m.ndim - 1)
        self.m = np.pad(self.m, pad)
        self.v = np.pad(self.v, pad)

    def compact(self, keep: np.ndarray) -> None:
        self.m = self.m[keep]
        self.v = self.v[keep]


def adam_step(
    param: np.ndarray,
    grad: np.ndarray,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    name: str = "",
) -> None:
    """One bias-corrected Adam update, in place.

    A non-finite gradient skips the whole tensor (state untouched) and logs;
    a zero gradient still advances t and decays the moments, leaving params
    unchanged when the moments are zero.
    """
    if not np.all(np.isfinite(grad)):
        log.warning("adam: non-finite gradient for %s, skipping update", name or "tensor")
        return
    state.t += 1
    state.m += (1.0 - beta1) * (grad - state.m)
    state.v += (1.0 - beta2) * (grad * grad - state.v)
    mhat = state.m / (1.0 - beta1**state.t)
    vhat = state.v / (1.0 - beta2**state.t)
    param -= lr * mhat / (np.sqrt(vhat) + eps)
