"""Minimal fully-connected networks in plain numpy.

Everything the agent learns runs through this module: batched forward with
optional inverted dropout, exact reverse-mode backward (including the input
gradient, needed to differentiate a critic with respect to its action
input), bias-corrected Adam, and versioned npz checkpoints that round-trip
bit-exactly.
"""
from __future__ import annotations

import io
import json
from dataclasses import dataclass

import numpy as np

__all__ = ["Mlp", "ForwardCache", "Adam", "CHECKPOINT_FORMAT_VERSION"]

CHECKPOINT_FORMAT_VERSION = 1

_HEADS = ("tanh", "identity")


@dataclass
class ForwardCache:
    x: np.ndarray
    pre: list          # pre-activations per layer
    post: list         # post-activation (and post-dropout) inputs to the next layer
    masks: list        # dropout masks per hidden layer (None when inactive)
    y: np.ndarray


class Mlp:
    """Fully connected net: ReLU hidden layers, tanh or identity head.

    ``dropout`` gives one keep-independent drop probability per hidden layer
    (inverted scaling, active only when forward(train=True) gets an rng).
    """

    def __init__(self, sizes: tuple, head: str = "identity", dropout: tuple | None = None):
        if len(sizes) < 2:
            raise ValueError("need at least an input and an output size")
        if any(int(s) <= 0 for s in sizes):
            raise ValueError(f"layer sizes must be positive, got {sizes}")
        if head not in _HEADS:
            raise ValueError(f"head must be one of {_HEADS}, got {head!r}")
        self.sizes = tuple(int(s) for s in sizes)
        self.head = head
        n_hidden = len(self.sizes) - 2
        self.dropout = tuple(dropout) if dropout is not None else (0.0,) * n_hidden
        if len(self.dropout) != n_hidden:
            raise ValueError(
                f"need one dropout probability per hidden layer ({n_hidden}), got {len(self.dropout)}"
            )
        if any(not 0.0 <= p < 1.0 for p in self.dropout):
            raise ValueError("dropout probabilities must lie in [0, 1)")
        self.weights = [np.zeros((a, b)) for a, b in zip(self.sizes[:-1], self.sizes[1:])]
        self.biases = [np.zeros(b) for b in self.sizes[1:]]

    # -- construction -----------------------------------------------------------
    @classmethod
    def init(
        cls,
        sizes: tuple,
        head: str,
        rng: np.random.Generator,
        dropout: tuple | None = None,
        final_scale: float = 3e-3,
    ) -> "Mlp":
        """He-style uniform fan-in init; final layer uniform in +/-final_scale
        so initial outputs sit near zero."""
        net = cls(sizes, head, dropout)
        for k, (fan_in, fan_out) in enumerate(zip(net.sizes[:-1], net.sizes[1:])):
            if k == len(net.weights) - 1:
                limit = final_scale
            else:
                limit = np.sqrt(6.0 / fan_in)
            net.weights[k] = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            net.biases[k] = rng.uniform(-limit, limit, size=fan_out)
        return net

    def copy(self) -> "Mlp":
        dup = Mlp(self.sizes, self.head, self.dropout)
        dup.weights = [w.copy() for w in self.weights]
        dup.biases = [b.copy() for b in self.biases]
        return dup

    @property
    def parameters(self) -> list:
        """Flat list of parameter arrays (weights then bias per layer)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters))

    # -- forward / backward ------------------------------------------------------
    def forward(
        self,
        x: np.ndarray,
        train: bool = False,
        rng: np.random.Generator | None = None,
    ) -> tuple[np.ndarray, ForwardCache]:
        """Batched forward pass; x is (batch, in) or (in,).

        Dropout fires only with train=True and an rng; evaluation and target
        passes stay deterministic.
        """
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[1] != self.sizes[0]:
            raise ValueError(f"input width {x.shape[1]} does not match {self.sizes[0]}")
        if train and rng is None and any(p > 0 for p in self.dropout):
            raise ValueError("training forward with dropout needs an rng")
        h = x
        pre, post, masks = [], [], []
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            pre.append(z)
            if k == last:
                y = np.tanh(z) if self.head == "tanh" else z
                break
            h = np.maximum(z, 0.0)
            p = self.dropout[k]
            if train and p > 0.0:
                mask = (rng.random(h.shape) >= p) / (1.0 - p)
                h = h * mask
                masks.append(mask)
            else:
                masks.append(None)
            post.append(h)
        cache = ForwardCache(x=x, pre=pre, post=post, masks=masks, y=y)
        return (y[0] if squeeze else y), cache

    def backward(self, cache: ForwardCache, dy: np.ndarray):
        """Exact gradients for a scalar loss with d(loss)/d(output) = dy.

        Returns (grads, dx): grads matches .parameters order, dx is the
        gradient with respect to the input batch.
        """
        dy = np.asarray(dy, dtype=float)
        if dy.ndim == 1:
            dy = dy[None, :]
        if self.head == "tanh":
            delta = dy * (1.0 - cache.y**2)
        else:
            delta = dy.copy()
        d_weights = [None] * len(self.weights)
        d_biases = [None] * len(self.biases)
        for k in range(len(self.weights) - 1, -1, -1):
            h_in = cache.x if k == 0 else cache.post[k - 1]
            d_weights[k] = h_in.T @ delta
            d_biases[k] = delta.sum(axis=0)
            if k == 0:
                dx = delta @ self.weights[0].T
                break
            delta = delta @ self.weights[k].T
            if cache.masks[k - 1] is not None:
                delta = delta * cache.masks[k - 1]
            delta = delta * (cache.pre[k - 1] > 0.0)
        grads = []
        for dw, db in zip(d_weights, d_biases):
            grads.extend((dw, db))
        return grads, dx

    # -- serialization -------------------------------------------------------------
    def _meta(self) -> dict:
        return {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "sizes": list(self.sizes),
            "head": self.head,
            "dropout": list(self.dropout),
        }

    def save(self, path) -> None:
        arrays = {f"w{k}": w for k, w in enumerate(self.weights)}
        arrays.update({f"b{k}": b for k, b in enumerate(self.biases)})
        meta = np.frombuffer(json.dumps(self._meta()).encode(), dtype=np.uint8)
        if hasattr(path, "write"):
            np.savez(path, meta=meta, **arrays)
        else:
            with open(path, "wb") as f:
                np.savez(f, meta=meta, **arrays)

    @classmethod
    def load(cls, path) -> "Mlp":
        with np.load(path) as data:
            meta = json.loads(bytes(data["meta"]).decode())
            if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
                raise ValueError(
                    f"unsupported checkpoint format_version {meta.get('format_version')!r}"
                )
            net = cls(tuple(meta["sizes"]), meta["head"], tuple(meta["dropout"]))
            for k in range(len(net.weights)):
                w, b = data[f"w{k}"], data[f"b{k}"]
                if w.shape != net.weights[k].shape or b.shape != net.biases[k].shape:
                    raise ValueError(f"checkpoint layer {k} shape mismatch")
                net.weights[k] = w.astype(float)
                net.biases[k] = b.astype(float)
        return net

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        self.save(buf)
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Mlp":
        return cls.load(io.BytesIO(blob))


class Adam:
    """Bias-corrected Adam over a list of parameter arrays (updates in place)."""

    def __init__(self, params: list, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params: list, grads: list) -> None:
        if len(params) != len(self.m) or len(grads) != len(self.m):
            raise ValueError("parameter/gradient count mismatch")
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise RuntimeError("non-finite gradient in Adam step")
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
