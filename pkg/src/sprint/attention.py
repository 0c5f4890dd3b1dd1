"""Toy multi-head attention block with per-head pruning.

Pruning head ``h`` means replacing its output ``a_h`` (a ``T x d`` block)
with zeros before the heads are concatenated and fed to the output
projection. ``mha_forward_zeroed_proj`` reaches the same result by zeroing
the rows of ``W_o`` that read head ``h``'s slice; the two are kept
independent so one can check the other.

Layout is row-major: inputs and outputs are ``T x model_dim``. There is no
causal mask, residual, MLP or layer norm. Multi-layer pruning is modelled as
independent blocks addressed by a layer index.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericError


@dataclass(frozen=True)
class AttentionConfig:
    num_heads: int
    head_dim: int
    model_dim: int
    seq_len: int

    def __post_init__(self):
        for name in ("num_heads", "head_dim", "model_dim", "seq_len"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise DimensionError(f"{name} must be a positive integer, got {value!r}")
        if self.model_dim != self.num_heads * self.head_dim:
            raise DimensionError(
                f"model_dim must equal num_heads * head_dim "
                f"({self.num_heads} * {self.head_dim} = {self.num_heads * self.head_dim}), "
                f"got {self.model_dim}"
            )

    @classmethod
    def from_heads(cls, num_heads: int, head_dim: int, seq_len: int) -> "AttentionConfig":
        return cls(num_heads, head_dim, num_heads * head_dim, seq_len)

    @property
    def concat_dim(self) -> int:
        return self.num_heads * self.head_dim


@dataclass(frozen=True)
class AttentionWeights:
    """Per-head projections stacked along axis 0.

    ``w_q``, ``w_k``, ``w_v`` have shape ``(H, model_dim, head_dim)``;
    ``w_o`` has shape ``(H * head_dim, model_dim)``; rows
    ``h*d:(h+1)*d`` of ``w_o`` read head ``h``.
    """

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    b_o: np.ndarray | None = None

    @classmethod
    def random(cls, cfg: AttentionConfig, rng: np.random.Generator, bias: bool = False):
        shape = (cfg.num_heads, cfg.model_dim, cfg.head_dim)
        scale = 1.0 / np.sqrt(cfg.model_dim)
        return cls(
            w_q=rng.standard_normal(shape) * scale,
            w_k=rng.standard_normal(shape) * scale,
            w_v=rng.standard_normal(shape) * scale,
            w_o=rng.standard_normal((cfg.concat_dim, cfg.model_dim)) * scale,
            b_o=rng.standard_normal(cfg.model_dim) if bias else None,
        )

    def check(self, cfg: AttentionConfig) -> None:
        head_shape = (cfg.num_heads, cfg.model_dim, cfg.head_dim)
        for name in ("w_q", "w_k", "w_v"):
            arr = getattr(self, name)
            if arr.shape != head_shape:
                raise DimensionError(f"{name} has shape {arr.shape}, expected {head_shape}")
        if self.w_o.shape != (cfg.concat_dim, cfg.model_dim):
            raise DimensionError(
                f"w_o has shape {self.w_o.shape}, expected {(cfg.concat_dim, cfg.model_dim)}"
            )
        if self.b_o is not None and self.b_o.shape != (cfg.model_dim,):
            raise DimensionError(f"b_o has shape {self.b_o.shape}, expected {(cfg.model_dim,)}")
        arrays = [self.w_q, self.w_k, self.w_v, self.w_o]
        if self.b_o is not None:
            arrays.append(self.b_o)
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise NumericError("attention weights contain non-finite entries")


@dataclass(frozen=True)
class HeadMask:
    """Set of pruned ``(layer, head)`` pairs.

    A frozenset gives the at-most-one-entry-per-pair invariant for free.
    """

    num_heads: int
    pruned_pairs: frozenset = field(default_factory=frozenset)
    num_layers: int = 1

    def __post_init__(self):
        pairs = frozenset((int(l), int(h)) for l, h in self.pruned_pairs)
        for layer, head in pairs:
            if not (0 <= head < self.num_heads and 0 <= layer < self.num_layers):
                raise DimensionError(
                    f"mask entry (layer={layer}, head={head}) out of range for "
                    f"L={self.num_layers}, H={self.num_heads}"
                )
        object.__setattr__(self, "pruned_pairs", pairs)

    @classmethod
    def none(cls, num_heads: int, num_layers: int = 1) -> "HeadMask":
        return cls(num_heads, frozenset(), num_layers)

    @classmethod
    def heads(cls, num_heads: int, heads, layer: int = 0, num_layers: int = 1) -> "HeadMask":
        return cls(num_heads, frozenset((layer, h) for h in heads), num_layers)

    @classmethod
    def all(cls, num_heads: int, layer: int = 0, num_layers: int = 1) -> "HeadMask":
        return cls.heads(num_heads, range(num_heads), layer, num_layers)

    def kept(self, layer: int = 0) -> np.ndarray:
        keep = np.ones(self.num_heads, dtype=bool)
        for l, h in self.pruned_pairs:
            if l == layer:
                keep[h] = False
        return keep

    def union(self, other: "HeadMask") -> "HeadMask":
        return HeadMask(self.num_heads, self.pruned_pairs | other.pruned_pairs, self.num_layers)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    x = x - np.max(x, axis=axis, keepdims=True)
    ex = np.exp(x)
    return ex / np.sum(ex, axis=axis, keepdims=True)


def _validate(x: np.ndarray, w: AttentionWeights, cfg: AttentionConfig, mask: HeadMask, layer: int):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (cfg.seq_len, cfg.model_dim):
        raise DimensionError(f"input has shape {x.shape}, expected {(cfg.seq_len, cfg.model_dim)}")
    if not np.all(np.isfinite(x)):
        raise NumericError("input contains non-finite entries")
    w.check(cfg)
    if mask.num_heads != cfg.num_heads:
        raise DimensionError(f"mask is for {mask.num_heads} heads, config has {cfg.num_heads}")
    if not 0 <= layer < mask.num_layers:
        raise DimensionError(f"layer {layer} out of range for mask with {mask.num_layers} layers")
    return x


def attention_weights(x: np.ndarray, w: AttentionWeights, cfg: AttentionConfig) -> np.ndarray:
    """Per-head attention probabilities, shape ``(H, T, T)``."""
    x = _validate(x, w, cfg, HeadMask.none(cfg.num_heads), 0)
    q = np.einsum("tm,hmd->htd", x, w.w_q)
    k = np.einsum("tm,hmd->htd", x, w.w_k)
    scores = q @ np.swapaxes(k, -1, -2) / np.sqrt(cfg.head_dim)
    return softmax(scores, axis=-1)


def head_outputs(x: np.ndarray, w: AttentionWeights, cfg: AttentionConfig) -> np.ndarray:
    """Unpruned head outputs ``a_h``, shape ``(H, T, d)``."""
    probs = attention_weights(x, w, cfg)
    v = np.einsum("tm,hmd->htd", np.asarray(x, dtype=np.float64), w.w_v)
    return probs @ v


def _concat(heads: np.ndarray) -> np.ndarray:
    # (H, T, d) -> (T, H*d), head h occupying columns h*d:(h+1)*d
    H, T, d = heads.shape
    return np.transpose(heads, (1, 0, 2)).reshape(T, H * d)


def mha_forward(x, w: AttentionWeights, cfg: AttentionConfig, mask: HeadMask, layer: int = 0):
    x = _validate(x, w, cfg, mask, layer)
    heads = head_outputs(x, w, cfg)
    heads[~mask.kept(layer)] = 0.0
    out = _concat(heads) @ w.w_o
    if w.b_o is not None:
        out = out + w.b_o
    return out


def mha_forward_zeroed_proj(x, w: AttentionWeights, cfg: AttentionConfig, mask: HeadMask, layer: int = 0):
    x = _validate(x, w, cfg, mask, layer)
    w_o = w.w_o.copy()
    d = cfg.head_dim
    for h in np.flatnonzero(~mask.kept(layer)):
        w_o[h * d:(h + 1) * d, :] = 0.0
    out = _concat(head_outputs(x, w, cfg)) @ w_o
    if w.b_o is not None:
        out = out + w.b_o
    return out


def attn_demo(cfg: AttentionConfig, seed: int, bias: bool = True) -> str:
    """Run both forwards for every single-head mask; one JSON line per mask."""
    rng = np.random.default_rng(seed)
    w = AttentionWeights.random(cfg, rng, bias=bias)
    x = rng.standard_normal((cfg.seq_len, cfg.model_dim))
    lines = []
    for h in range(cfg.num_heads):
        mask = HeadMask.heads(cfg.num_heads, [h])
        a = mha_forward(x, w, cfg, mask)
        b = mha_forward_zeroed_proj(x, w, cfg, mask)
        dev = float(np.max(np.abs(a - b)))
        lines.append(json.dumps({"layer": 0, "head": h, "max_abs_diff": dev, "ok": dev <= 1e-12}))
    return "\n".join(lines)
