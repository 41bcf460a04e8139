"""The full graph-to-text model and its parameter groups."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .config import ModelConfig
from .decoder import SACA, DGPGate, Decoder, PredictionHead
from .encoder import Encoder
from .layers import Module, init_weight
from .numerics import Tensor

GROUPS = ("backbone", "adapters", "saca", "dgp", "head")


class UnknownGroup(KeyError):
    pass


@dataclass
class ForwardResult:
    logits: Tensor          # (B, T, V)
    gates: Tensor | None    # (B, T, N)
    states: Tensor          # (B, T, d) last decoder block
    memory: Tensor          # (B, N, d) encoder output


@dataclass
class EncodedGraph:
    """Encoder output for inference plus what the decoder needs to use it."""
    memory: Tensor
    node_mask: np.ndarray
    joint_adj: np.ndarray
    cache: dict = field(default_factory=dict)   # step-independent projections, filled by step()

    def repeat(self, k: int) -> "EncodedGraph":
        idx = np.zeros(k, dtype=np.int64)
        return EncodedGraph(Tensor(self.memory.data[idx]), self.node_mask[idx], self.joint_adj[idx])


class GraphToText(Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        if cfg.vocab_size <= 0:
            raise ValueError("ModelConfig.vocab_size must be set")
        self.cfg = cfg
        rng = np.random.default_rng(cfg.init_seed)
        self.embed = init_weight(rng, (cfg.vocab_size, cfg.model_dim), 1, "backbone")
        self.encoder = Encoder(cfg, self.embed, rng)
        self.decoder = Decoder(cfg, self.embed, rng)
        self.saca = SACA(cfg, rng) if cfg.use_saca else None
        self.gate = DGPGate(cfg.model_dim, cfg.gate_dim, rng) if cfg.use_dgp else None
        self.head = PredictionHead(cfg.model_dim, cfg.vocab_size, rng)
        for name, p in self.named_parameters():
            p.name = name

    # -- parameter bookkeeping ------------------------------------------------------
    def state_dict(self) -> dict:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, arrays: dict, strict: bool = True) -> None:
        params = dict(self.named_parameters())
        if strict and set(arrays) != set(params):
            missing = sorted(set(params) - set(arrays))
            extra = sorted(set(arrays) - set(params))
            raise KeyError(f"state mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
        for name, arr in arrays.items():
            p = params[name]
            if p.shape != arr.shape:
                raise nm.ShapeMismatch(f"{name}: {arr.shape} vs {p.shape}")
            p.data = np.array(arr, dtype=p.dtype)

    def astype(self, dtype) -> "GraphToText":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def groups(self) -> dict:
        out = {g: [] for g in GROUPS}
        for p in self.parameters():
            out[p.group].append(p)
        return out

    def freeze(self, group_names) -> "GraphToText":
        """Stop updating every parameter in the named groups."""
        groups = self.groups()
        for g in group_names:
            if g not in groups:
                raise UnknownGroup(g)
        for g in group_names:
            for p in groups[g]:
                p.set_trainable(False)
        return self

    def unfreeze_all(self) -> "GraphToText":
        for p in self.parameters():
            p.set_trainable(True)
        return self

    def num_parameters(self, groups=None) -> int:
        return sum(p.data.size for p in self.parameters() if groups is None or p.group in groups)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    # -- forward ------------------------------------------------------------------
    def encode_batch(self, batch, rng=None) -> Tensor:
        return self.encoder.forward_batch(batch, rng)

    def context(self, memory, states, joint_adj, gate_override=None, cache=None):
        """SACA context and gates for decoder ``states`` (B, T, d).

        ``cache`` (inference only) keeps the step-independent node projections.
        """
        if self.saca is None:
            return None, None
        gates = None
        if self.gate is not None:
            if gate_override is not None:
                b, t = states.shape[:2]
                n = memory.shape[1]
                gates = Tensor(np.broadcast_to(np.asarray(gate_override, dtype=memory.dtype), (b, t, n)).copy())
            else:
                if cache is not None and "gate" not in cache:
                    cache["gate"] = self.gate.node_term(memory)
                gates = self.gate(memory, states, None if cache is None else cache["gate"])
        if cache is not None and self.saca.layers and "saca" not in cache:
            cache["saca"] = self.saca.node_projections(memory)
        proj = None if cache is None else cache.get("saca")
        return self.saca(memory, states, joint_adj, gates, proj), gates

    def forward(self, batch, rng=None, gate_override=None) -> ForwardResult:
        """Teacher-forced logits for every target position of the batch."""
        memory = self.encode_batch(batch, rng)
        states = self.decoder(batch.tgt_in, memory, batch.node_mask, rng)
        ctx, gates = self.context(memory, states, batch.joint_adj, gate_override)
        logits = self.head(states, ctx)
        return ForwardResult(logits, gates, states, memory)

    __call__ = forward

    def encode(self, batch) -> EncodedGraph:
        with nm.no_grad():
            memory = self.encode_batch(batch)
        return EncodedGraph(memory, batch.node_mask, batch.joint_adj)

    def step(self, enc: EncodedGraph, prefix: np.ndarray, gate_override=None):
        """Next-token log-probabilities after ``prefix`` (K, t) for K rows of ``enc``.

        The decoder is rerun over the whole prefix and the joint graph is
        rebuilt for the new step; projections of the encoder output are
        computed once and kept in ``enc.cache``.
        Returns ``(logp (K, V), gates (K, N) or None)``.
        """
        with nm.no_grad():
            if "cross" not in enc.cache:
                enc.cache["cross"] = self.decoder.memory_kv(enc.memory)
            states = self.decoder(prefix, enc.memory, enc.node_mask, memory_kv=enc.cache["cross"])
            last = states[:, -1:, :]
            ctx, gates = self.context(enc.memory, last, enc.joint_adj, gate_override, enc.cache)
            logits = self.head(last, ctx).data[:, 0, :]
        z = logits - logits.max(axis=-1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
        return logp, (None if gates is None else gates.data[:, 0, :])


def added_parameter_count(cfg: ModelConfig) -> int:
    """Closed-form size of the SACA and DGP parameters implied by a config."""
    d, m, r = cfg.model_dim, cfg.saca_dim, 3
    total = 0
    if cfg.use_saca and cfg.saca_layers:
        d_in = d
        for _ in range(cfg.saca_layers):
            total += 3 * d_in * m + r * m
            d_in = m
        total += m * d
    if cfg.use_dgp:
        total += 2 * d * cfg.gate_dim + cfg.gate_dim
    return total
