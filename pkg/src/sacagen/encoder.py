"""Transformer encoder over graph tokens with a structural adapter after each block."""
from __future__ import annotations

import numpy as np

from . import numerics as nm
from .graph import RELATIONS
from .layers import FeedForward, LayerNorm, Module, MultiHeadAttention, init_weight
from .numerics import Tensor


class StructuralAdapter(Module):
    """Residual relational GCN over the token graph.

    For node v: g_v = sum_r sum_{u in N_r(v)} W_r LN(h_u) / |N_r(v)| and the
    output is W_e relu(g_v) + h_v.  ``W_r`` are stored side by side as one
    (model_dim, R * adapter_dim) matrix.
    """

    def __init__(self, dim: int, adapter_dim: int, rng, num_relations: int = len(RELATIONS)):
        super().__init__()
        self.num_relations = num_relations
        self.adapter_dim = adapter_dim
        self.norm = LayerNorm(dim, "adapters")
        self.w_rel = init_weight(rng, (dim, num_relations * adapter_dim), dim, "adapters")
        self.w_out = init_weight(rng, (adapter_dim, dim), adapter_dim, "adapters")

    def __call__(self, h: Tensor, agg: np.ndarray) -> Tensor:
        """``h``: (B, N, d); ``agg``: (B, R, N, N) mean-normalised weights ``[b, r, dst, src]``."""
        if agg.shape[-1] != h.shape[-2]:
            raise nm.ShapeMismatch(f"adjacency {agg.shape} does not match node states {h.shape}")
        b, n, _ = h.shape
        r, a = self.num_relations, self.adapter_dim
        proj = (self.norm(h) @ self.w_rel).reshape(b, n, r, a)
        proj = nm.transpose(proj, (0, 2, 1, 3))              # (B, R, N, a)
        msg = nm.as_tensor(agg, h.dtype) @ proj             # (B, R, N, a)
        g = msg.sum(axis=1)
        return nm.relu(g) @ self.w_out + h


class EncoderBlock(Module):
    def __init__(self, cfg, rng):
        super().__init__()
        self.norm_attn = LayerNorm(cfg.model_dim, "backbone")
        self.attn = MultiHeadAttention(cfg.model_dim, cfg.heads, rng, "backbone")
        self.norm_ffn = LayerNorm(cfg.model_dim, "backbone")
        self.ffn = FeedForward(cfg.model_dim, cfg.ffn_dim, rng, "backbone", cfg.dropout)
        self.adapter = StructuralAdapter(cfg.model_dim, cfg.adapter_dim, rng) if cfg.structural_adapter else None
        self.dropout = cfg.dropout

    def __call__(self, x: Tensor, node_mask: np.ndarray, agg: np.ndarray, rng=None) -> Tensor:
        y = self.norm_attn(x)
        a = self.attn(y, y, node_mask[:, None, :])
        if self.training:
            a = nm.dropout(a, self.dropout, rng)
        x = x + a
        f = self.ffn(self.norm_ffn(x), rng)
        if self.training:
            f = nm.dropout(f, self.dropout, rng)
        x = x + f
        if self.adapter is not None:
            x = self.adapter(x, agg)
        return x


class Encoder(Module):
    """Token embeddings -> blocks of (self-attention, FFN, structural adapter).

    No positional encoding unless ``span_positions`` is on, in which case the
    position of a token inside its own node label is embedded.  The stack ends
    in a layer norm (pre-norm blocks leave the residual stream unnormalised).
    """

    def __init__(self, cfg, embed: nm.Parameter, rng):
        super().__init__()
        self.embed = embed  # shared with the decoder; registered by the parent
        self._children.pop("embed")
        self.span_pos = init_weight(rng, (32, cfg.model_dim), 1, "backbone", 0.1) if cfg.span_positions else None
        self.blocks = [EncoderBlock(cfg, rng) for _ in range(cfg.enc_layers)]
        self.final_norm = LayerNorm(cfg.model_dim, "backbone") if cfg.enc_layers else None

    def __call__(self, node_ids, node_mask, agg, positions=None, rng=None) -> Tensor:
        x = nm.gather(self.embed, node_ids)
        if self.span_pos is not None and positions is not None:
            x = x + nm.gather(self.span_pos, np.minimum(positions, 31))
        for block in self.blocks:
            x = block(x, node_mask, agg, rng)
        return self.final_norm(x) if self.final_norm is not None else x

    def forward_batch(self, batch, rng=None) -> Tensor:
        return self(batch.node_ids, batch.node_mask, batch.rgcn_adj, batch.positions, rng)
