"""
Tiny decoder-only transformer over the unified vocabulary.

The token table is tied to the output projection, and its visual-id rows are
the language model's codebook. Positions listed in a batch's prefix index
take their input embedding from injected feature rows instead of the table.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from unicodebook.domain.errors import ShapeMismatchError, UsageError
from unicodebook.numerics import functional as F
from unicodebook.numerics.layers import Embedding, LayerNorm, Linear, Module
from unicodebook.numerics.tensor import Tensor

logger = logging.getLogger(__name__)

MASK_VALUE = -1e9


@dataclass(frozen=True)
class TransformerConfig:
    vocab_size: int
    width: int = 128
    layers: int = 4
    heads: int = 4
    context: int = 512
    mlp_ratio: int = 4
    prefix_width: int | None = None

    def __post_init__(self) -> None:
        if self.width % self.heads:
            raise UsageError(f"width {self.width} is not divisible by heads {self.heads}")


class CausalSelfAttention(Module):
    def __init__(self, width: int, heads: int, rng: np.random.Generator) -> None:
        self.heads = heads
        self.head_dim = width // heads
        self.query = Linear(width, width, rng)
        self.key = Linear(width, width, rng)
        self.value = Linear(width, width, rng)
        self.proj = Linear(width, width, rng, std=0.02)

    def _split(self, x: Tensor, b: int, t: int) -> Tensor:
        return x.reshape(b, t, self.heads, self.head_dim).transpose(0, 2, 1, 3)

    def forward(self, x: Tensor) -> Tensor:
        b, t, width = x.shape
        q = self._split(self.query(x), b, t)
        k = self._split(self.key(x), b, t)
        v = self._split(self.value(x), b, t)
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(self.head_dim))
        future = np.triu(np.full((t, t), MASK_VALUE), k=1)
        att = F.softmax(scores + future, axis=-1)
        out = (att @ v).transpose(0, 2, 1, 3).reshape(b, t, width)
        return self.proj(out)


class Block(Module):
    """Pre-norm residual block: attention then MLP."""

    def __init__(self, width: int, heads: int, mlp_ratio: int, rng: np.random.Generator) -> None:
        self.ln_attn = LayerNorm(width)
        self.attn = CausalSelfAttention(width, heads, rng)
        self.ln_mlp = LayerNorm(width)
        self.fc_in = Linear(width, width * mlp_ratio, rng)
        self.fc_out = Linear(width * mlp_ratio, width, rng, std=0.02)

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.ln_attn(x))
        return x + self.fc_out(F.gelu(self.fc_in(self.ln_mlp(x))))


class TinyTransformerLM(Module):
    def __init__(self, config: TransformerConfig, rng: np.random.Generator) -> None:
        self.config = config
        self.tok_emb = Embedding(config.vocab_size, config.width, rng)
        self.pos_emb = Embedding(config.context, config.width, rng)
        self.blocks = [
            Block(config.width, config.heads, config.mlp_ratio, rng) for _ in range(config.layers)
        ]
        self.ln_final = LayerNorm(config.width)
        self.prefix_proj = (
            Linear(config.prefix_width, config.width, rng)
            if config.prefix_width is not None and config.prefix_width != config.width
            else None
        )
        logger.debug(
            "Built LM: V=%d width=%d layers=%d heads=%d context=%d projection=%s",
            config.vocab_size,
            config.width,
            config.layers,
            config.heads,
            config.context,
            self.prefix_proj is not None,
        )

    # ── Tied visual block ─────────────────────────

    def visual_block(self, rows: slice) -> np.ndarray:
        """Copy of the visual-id rows of the tied table (the LM's codebook)."""
        return self.tok_emb.weight.data[rows].copy()

    def set_visual_block(self, rows: slice, entries: np.ndarray) -> None:
        target = self.tok_emb.weight.data[rows]
        if target.shape != entries.shape:
            raise ShapeMismatchError("set_visual_block", target.shape, entries.shape)
        self.tok_emb.weight.data[rows] = entries

    # ── Forward ───────────────────────────────────

    def _inject(self, x: Tensor, prefix_index: np.ndarray, prefix_values: np.ndarray) -> Tensor:
        b, t, width = x.shape
        values = Tensor(prefix_values)
        if self.prefix_proj is not None:
            values = self.prefix_proj(values)
        elif prefix_values.shape[1] != width:
            raise ShapeMismatchError("prefix embeddings", prefix_values.shape, (width,))
        keep = np.ones((b * t, 1))
        keep[prefix_index] = 0.0
        flat = x.reshape(b * t, width) * keep + F.scatter_rows(values, prefix_index, b * t)
        return flat.reshape(b, t, width)

    def forward(
        self,
        ids: np.ndarray,
        prefix_index: np.ndarray | None = None,
        prefix_values: np.ndarray | None = None,
    ) -> Tensor:
        """
        Logits (B, T, V) for a (B, T) id batch.

        ``prefix_index`` holds flat positions ``b * T + t`` whose input rows
        come from ``prefix_values``.
        """
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None]
        b, t = ids.shape
        if t > self.config.context:
            raise UsageError(f"Sequence length {t} exceeds the context limit {self.config.context}")

        x = self.tok_emb(ids)
        if prefix_index is not None and len(prefix_index):
            x = self._inject(x, np.asarray(prefix_index, dtype=np.int64), np.asarray(prefix_values))
        x = x + self.pos_emb(np.arange(t))
        for block in self.blocks:
            x = block(x)
        return self.ln_final(x) @ self.tok_emb.weight.transpose()
