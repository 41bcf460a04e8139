"""Decoder side: transformer blocks with FFN adapters, structure-aware
cross-attention (relational graph attention over the joint graph), and the
dynamic graph-pruning gates.
"""
from __future__ import annotations

import math

import numpy as np

from . import numerics as nm
from .graph import RELATIONS, REL_INDEX, JointGraph, build_joint_graph
from .layers import FeedForward, LayerNorm, Module, MultiHeadAttention, init_weight
from .numerics import Tensor


class DegenerateNeighborhood(ArithmeticError):
    pass


class FFNAdapter(Module):
    """z = W_o relu(W_p LN(h)) + h."""

    def __init__(self, dim: int, adapter_dim: int, rng):
        super().__init__()
        self.norm = LayerNorm(dim, "adapters")
        self.w_p = init_weight(rng, (dim, adapter_dim), dim, "adapters")
        self.w_o = init_weight(rng, (adapter_dim, dim), adapter_dim, "adapters")

    def __call__(self, h: Tensor) -> Tensor:
        return nm.relu(self.norm(h) @ self.w_p) @ self.w_o + h


class DecoderBlock(Module):
    def __init__(self, cfg, rng):
        super().__init__()
        d = cfg.model_dim
        self.norm_self = LayerNorm(d, "backbone")
        self.self_attn = MultiHeadAttention(d, cfg.heads, rng, "backbone")
        self.norm_cross = LayerNorm(d, "backbone")
        self.cross_attn = MultiHeadAttention(d, cfg.heads, rng, "backbone")
        self.norm_ffn = LayerNorm(d, "backbone")
        self.ffn = FeedForward(d, cfg.ffn_dim, rng, "backbone", cfg.dropout)
        self.adapter = FFNAdapter(d, cfg.adapter_dim, rng) if cfg.ffn_adapter else None
        self.dropout = cfg.dropout

    def __call__(self, y, memory, causal, node_mask, rng=None, memory_kv=None):
        drop = (lambda t: nm.dropout(t, self.dropout, rng)) if self.training else (lambda t: t)
        z = self.norm_self(y)
        y = y + drop(self.self_attn(z, z, causal))
        y = y + drop(self.cross_attn(self.norm_cross(y), memory, node_mask[:, None, :], memory_kv))
        y = y + drop(self.ffn(self.norm_ffn(y), rng))
        if self.adapter is not None:
            y = self.adapter(y)
        return y


class Decoder(Module):
    def __init__(self, cfg, embed: nm.Parameter, rng):
        super().__init__()
        self.embed = embed
        self._children.pop("embed")
        self.pos = init_weight(rng, (cfg.max_positions, cfg.model_dim), 1, "backbone", 0.1)
        self.blocks = [DecoderBlock(cfg, rng) for _ in range(cfg.dec_layers)]
        self.final_norm = LayerNorm(cfg.model_dim, "backbone") if cfg.dec_layers else None

    def memory_kv(self, memory: Tensor) -> list:
        return [block.cross_attn.memory_kv(memory) for block in self.blocks]

    def __call__(self, tgt_in: np.ndarray, memory: Tensor, node_mask: np.ndarray, rng=None,
                 memory_kv: list | None = None) -> Tensor:
        """Hidden states of the last block, (B, T, d), under a causal mask.

        ``memory_kv`` holds per-block cross-attention projections from :meth:`memory_kv`.
        """
        b, t = tgt_in.shape
        if t > self.pos.shape[0]:
            raise ValueError(f"target length {t} exceeds max_positions {self.pos.shape[0]}")
        y = nm.gather(self.embed, tgt_in) + self.pos[:t]
        causal = np.tril(np.ones((t, t), dtype=bool))[None]
        for i, block in enumerate(self.blocks):
            y = block(y, memory, causal, node_mask, rng, None if memory_kv is None else memory_kv[i])
        return self.final_norm(y) if self.final_norm is not None else y


# -- structure-aware cross-attention ----------------------------------------------

class RGATLayer(Module):
    """Relational graph attention.

    s(v, u) = (W_q h_v) . (W_k h_u + E_rel(v,u)) / sqrt(m) over in-neighbours u
    of v (one entry per edge, so parallel edges of different relation types are
    separate terms), alpha = softmax over u, optionally weighted by a gate on u,
    and h'_v = relu(sum_u alpha(v, u) W_v h_u).
    """

    def __init__(self, d_in: int, dim: int, rng, heads: int = 1, num_relations: int = len(RELATIONS)):
        super().__init__()
        self.dim, self.heads, self.num_relations = dim, heads, num_relations
        self.wq = init_weight(rng, (d_in, dim), d_in, "saca")
        self.wk = init_weight(rng, (d_in, dim), d_in, "saca")
        self.wv = init_weight(rng, (d_in, dim), d_in, "saca")
        self.rel = init_weight(rng, (num_relations, dim), 1, "saca", 0.1)

    def project(self, h: Tensor):
        return h @ self.wq, h @ self.wk, h @ self.wv

    def attend(self, q: Tensor, k: Tensor, v: Tensor, adj: np.ndarray, gates: Tensor | None = None,
               strict: bool = False) -> Tensor:
        """Attention from projected states.

        ``q``: (..., nq, m) for the query rows; ``k``, ``v``: (..., n, m);
        ``adj``: bool (..., nq, R, n) with ``adj[.., v, r, u]`` true for an edge
        u -> v of relation r; ``gates``: (..., n) or None.
        """
        nh, m = self.heads, self.dim
        dh = m // nh
        lead = q.shape[:-2]
        nq, n = q.shape[-2], k.shape[-2]
        r = self.num_relations
        if nh == 1:
            qh, kh, vh = q, k, v
            rel = self.rel
        else:
            def split(x, rows):
                x = x.reshape(*lead, rows, nh, dh)
                return nm.swapaxes(x, -2, -3)  # (..., H, rows, dh)
            qh, kh, vh = split(q, nq), split(k, n), split(v, n)
            rel = nm.swapaxes(self.rel.reshape(r, nh, dh), 0, 1)  # (H, R, dh)
        scale = 1.0 / math.sqrt(dh)
        qk = qh @ kh.T                                       # (..., [H], nq, n)
        qe = qh @ rel.T                                      # (..., [H], nq, R)
        scores = (qk.reshape(*qk.shape[:-1], 1, n) + qe.reshape(*qe.shape, 1)) * scale
        flat = scores.reshape(*scores.shape[:-2], r * n)     # (..., [H], nq, R*n)
        mask = np.asarray(adj, dtype=bool)
        mask = mask.reshape(*mask.shape[:-2], r * n)
        if nh > 1:
            mask = mask[..., None, :, :]
        weights = None
        if gates is not None:
            g = gates.reshape(*gates.shape[:-1], 1, 1, n)
            if nh > 1:
                g = g.reshape(*gates.shape[:-1], 1, 1, 1, n)
            g = nm.broadcast_to(g, (*g.shape[:-2], r, n))
            weights = g.reshape(*g.shape[:-2], r * n)
        if strict:
            self._check_neighbourhoods(flat, mask, weights)
        alpha = nm.masked_softmax(flat, mask, weights)
        alpha = alpha.reshape(*alpha.shape[:-1], r, n).sum(axis=-2)  # (..., [H], nq, n)
        out = alpha @ vh
        if nh > 1:
            out = nm.swapaxes(out, -2, -3).reshape(*lead, nq, m)
        return nm.relu(out)

    @staticmethod
    def _check_neighbourhoods(scores, mask, weights):
        s = scores.data
        w = 1.0 if weights is None else np.broadcast_to(weights.data, s.shape)
        m = np.broadcast_to(mask, s.shape)
        shift = np.where(m, s, -np.inf).max(axis=-1, keepdims=True)
        with np.errstate(invalid="ignore", over="ignore"):
            mass = np.where(m, w * np.exp(s - shift), 0).sum(axis=-1)
        if np.any(m.any(axis=-1) & (mass < 1e-12)):
            raise DegenerateNeighborhood("every in-neighbour of some node is gated off")

    def __call__(self, h: Tensor, adj: np.ndarray, gates: Tensor | None = None, strict: bool = False) -> Tensor:
        """Full layer on node states ``h`` (..., n, d_in) with ``adj`` (..., R, n, n) as ``[r, dst, src]``."""
        q, k, v = self.project(h)
        return self.attend(q, k, v, joint_mask(adj), gates, strict)


def joint_mask(adj: np.ndarray) -> np.ndarray:
    """(..., R, n, n) ``[r, dst, src]`` -> (..., n, R, n) ``[dst, r, src]`` boolean."""
    return np.swapaxes(np.asarray(adj) > 0, -3, -2)


class DGPGate(Module):
    """g_v = sigmoid(w_g . tanh(W_e h_v + W_d h_t)) for every input-graph node."""

    def __init__(self, dim: int, gate_dim: int, rng):
        super().__init__()
        self.w_e = init_weight(rng, (dim, gate_dim), dim, "dgp")
        self.w_d = init_weight(rng, (dim, gate_dim), dim, "dgp")
        self.w_g = init_weight(rng, (gate_dim, 1), gate_dim, "dgp")

    def node_term(self, nodes: Tensor) -> Tensor:
        return nodes @ self.w_e

    def __call__(self, nodes: Tensor, state: Tensor, node_term: Tensor | None = None) -> Tensor:
        """``nodes``: (B, N, d), ``state``: (B, T, d) -> gates (B, T, N)."""
        b, n, _ = nodes.shape
        t = state.shape[1]
        k = self.w_e.shape[1]
        e = node_term if node_term is not None else self.node_term(nodes)
        pre = e.reshape(b, 1, n, k) + (state @ self.w_d).reshape(b, t, 1, k)
        return nm.sigmoid((nm.tanh(pre) @ self.w_g).reshape(b, t, n))


class SACA(Module):
    """Stacked RGAT layers over the joint graph, read out at the context node.

    Node states of the input graph start from the encoder output and the
    context node starts from the decoder state of the step; the context node's
    final state is projected back to ``model_dim``.  The joint graph is
    replicated per decoding step, so steps never see each other.
    """

    def __init__(self, cfg, rng):
        super().__init__()
        d, m = cfg.model_dim, cfg.saca_dim
        dims = [d] + [m] * cfg.saca_layers
        self.layers = [RGATLayer(dims[i], m, rng, cfg.saca_heads) for i in range(cfg.saca_layers)]
        self.w_out = init_weight(rng, (m, d), m, "saca") if cfg.saca_layers else None

    def node_projections(self, nodes: Tensor) -> tuple:
        """First-layer projections of the input-graph nodes; they do not depend on the step."""
        return self.layers[0].project(nodes)

    def __call__(self, nodes: Tensor, state: Tensor, joint_adj: np.ndarray, gates: Tensor | None = None,
                 node_proj: tuple | None = None) -> Tensor:
        """``nodes`` (B, N, d), ``state`` (B, T, d), ``joint_adj`` (B, R, N+1, N+1) with the
        context node last, ``gates`` (B, T, N) or None -> context (B, T, d)."""
        if not self.layers:
            return state
        b, n, _ = nodes.shape
        t = state.shape[1]
        full_mask = joint_mask(joint_adj)[:, None]           # (B, 1, N+1, R, N+1)
        g = None
        if gates is not None:
            ones = nm.Tensor(np.ones((b, t, 1), dtype=gates.dtype))
            g = nm.concat([gates, ones], axis=-1)            # (B, T, N+1)

        def stack(node_part, ctx_part):
            k = node_part.shape[-1]
            node_part = nm.broadcast_to(node_part.reshape(b, 1, n, k), (b, t, n, k))
            return nm.concat([node_part, ctx_part.reshape(b, t, 1, k)], axis=2)

        # first layer: node projections are shared by all steps
        first = self.layers[0]
        qn, kn, vn = node_proj if node_proj is not None else first.project(nodes)
        qc, kc, vc = first.project(state)
        k_all, v_all = stack(kn, kc), stack(vn, vc)
        h = None
        for i, layer in enumerate(self.layers):
            last = i == len(self.layers) - 1
            if i == 0:
                q = qc.reshape(b, t, 1, -1) if last else stack(qn, qc)
                k, v = k_all, v_all
            elif last:
                # only the context node's query is read out
                q, k, v = h[:, :, n:n + 1] @ layer.wq, h @ layer.wk, h @ layer.wv
            else:
                q, k, v = layer.project(h)
            mask = full_mask[:, :, n:n + 1] if last else full_mask
            h = layer.attend(q, k, v, mask, g)
        return h.reshape(b, t, -1) @ self.w_out


class PredictionHead(Module):
    """logits = W_vocab LN(h_t + context)."""

    def __init__(self, dim: int, vocab_size: int, rng):
        super().__init__()
        self.norm = LayerNorm(dim, "head")
        self.w_vocab = init_weight(rng, (dim, vocab_size), dim, "head")

    def __call__(self, state: Tensor, context: Tensor | None = None) -> Tensor:
        x = state if context is None else state + context
        return self.norm(x) @ self.w_vocab


def saca_forward(saca: SACA, gate: DGPGate | None, encoder_nodes: Tensor, graph, decoder_state: Tensor,
                 use_dgp: bool = True, gate_override=None):
    """Context vector for one example at one step, straight from the joint graph.

    ``encoder_nodes`` (N, d), ``graph`` a TokenGraph or JointGraph, ``decoder_state`` (d,).
    Returns ``(context (d,), gates (N,) or None)``.
    """
    jg = graph if isinstance(graph, JointGraph) else build_joint_graph(graph)
    n = jg.base.num_nodes
    d = encoder_nodes.shape[-1]
    adj = np.zeros((len(RELATIONS), n + 1, n + 1), dtype=bool)
    for src, dst, rel in jg.edges:
        adj[REL_INDEX[rel], dst, src] = True
    nodes = encoder_nodes.reshape(1, n, d)
    state = decoder_state.reshape(1, 1, d)
    gates = None
    if use_dgp:
        if gate_override is not None:
            gates = nm.Tensor(np.broadcast_to(np.asarray(gate_override, dtype=nodes.dtype), (1, 1, n)).copy())
        else:
            gates = gate(nodes, state)
    ctx = saca(nodes, state, adj[None], gates)
    return ctx.reshape(d), (None if gates is None else gates.reshape(n))
