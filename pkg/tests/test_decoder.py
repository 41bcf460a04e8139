import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from sacagen import numerics as nm
from sacagen.config import ModelConfig
from sacagen.decoder import (
    SACA, DGPGate, DegenerateNeighborhood, FFNAdapter, PredictionHead, RGATLayer, saca_forward,
)
from sacagen.graph import DEFAULT, RELATIONS, REL_INDEX, MultiRelGraph, levi_transform
from sacagen.numerics import Tensor

from conftest import leaf
from helpers import copy_shared, small_model, toy_batch, toy_vocab


# -- FFN adapter ----------------------------------------------------------------------------

def test_ffn_adapter_zero_output_is_identity():
    ad = FFNAdapter(4, 3, np.random.default_rng(0))
    ad.w_o.data[:] = 0
    h = np.random.default_rng(1).normal(size=(2, 3, 4))
    assert np.array_equal(ad(Tensor(h)).data, h)


def test_ffn_adapter_hand_computed_dim2():
    ad = FFNAdapter(2, 2, np.random.default_rng(0))
    ad.w_p.data = np.array([[1.0, 0.0], [0.0, 2.0]])
    ad.w_o.data = np.array([[1.0, 1.0], [0.5, 0.0]])
    # LN([2, 0]) = [1, -1] / sqrt(1 + 1e-5) = c * [1, -1]; W_p -> c*[1, -2]; relu -> c*[1, 0]
    c = 1 / math.sqrt(1 + 1e-5)
    out = ad(Tensor([[[2.0, 0.0]]])).data
    assert np.allclose(out, [[[2.0 + c, c]]], rtol=0, atol=1e-15)


def test_ffn_adapter_gradcheck():
    rng = np.random.default_rng(2)
    ad = FFNAdapter(5, 4, rng)
    x = leaf(rng.normal(size=(2, 3, 5)))
    probe = Tensor(rng.normal(size=(2, 3, 5)))
    rep = nm.finite_diff_check(lambda: (ad(x) * probe).sum(), [x] + ad.parameters())
    assert rep.max_rel_error < 1e-6


# -- RGAT layer ------------------------------------------------------------------------------

def _random_joint_adj(rng, n_tokens, p=0.5):
    """Token-level random edges plus the joint-graph context node and self edges."""
    n = n_tokens + 1
    adj = np.zeros((3, n, n), dtype=bool)
    adj[:2, :n_tokens, :n_tokens] = rng.random((2, n_tokens, n_tokens)) < p
    adj[0, n_tokens, :n_tokens] = True   # v_i -> v_d default
    adj[1, :n_tokens, n_tokens] = True   # v_d -> v_i reverse
    adj[2] |= np.eye(n, dtype=bool)
    return adj


def _loop_rgat(layer, h, adj, gates=None):
    """Per-edge message passing with an arbitrary-precision softmax."""
    mpmath.mp.dps = 50
    n = h.shape[0]
    q, k, v = h @ layer.wq.data, h @ layer.wk.data, h @ layer.wv.data
    e = layer.rel.data
    m = layer.dim
    out = np.zeros((n, m))
    alphas = np.zeros((n, n))
    for dst in range(n):
        terms = []
        for r in range(len(RELATIONS)):
            for src in range(n):
                if adj[r, dst, src]:
                    s = float(q[dst] @ (k[src] + e[r])) / math.sqrt(m)
                    g = 1.0 if gates is None else float(gates[src])
                    terms.append((src, mpmath.mpf(g) * mpmath.exp(mpmath.mpf(s))))
        total = mpmath.fsum(t for _, t in terms)
        for src, t in terms:
            a = float(t / total)
            alphas[dst, src] += a
            out[dst] += a * v[src]
    return np.maximum(out, 0), alphas


@pytest.mark.parametrize("gated", [False, True])
def test_rgat_matches_per_edge_loop(gated):
    rng = np.random.default_rng(4)
    layer = RGATLayer(6, 5, rng)
    layer.rel.data = rng.normal(size=layer.rel.shape)
    for trial in range(5):
        h = rng.normal(size=(4, 6))
        adj = _random_joint_adj(rng, 3)
        gates = np.append(rng.uniform(0.05, 1, 3), 1.0) if gated else None
        got = layer(Tensor(h), adj, None if gates is None else Tensor(gates)).data
        want, _ = _loop_rgat(layer, h, adj, gates)
        assert np.max(np.abs(got - want)) <= 1e-10


def test_rgat_multihead_matches_per_head_loop():
    rng = np.random.default_rng(5)
    layer = RGATLayer(6, 4, rng, heads=2)
    h = rng.normal(size=(5, 6))
    adj = _random_joint_adj(rng, 4)
    got = layer(Tensor(h), adj).data
    want = []
    for hd in range(2):
        sub = RGATLayer(6, 2, rng)
        sl = slice(2 * hd, 2 * hd + 2)
        sub.wq.data, sub.wk.data, sub.wv.data = layer.wq.data[:, sl], layer.wk.data[:, sl], layer.wv.data[:, sl]
        sub.rel.data = layer.rel.data[:, sl]
        want.append(_loop_rgat(sub, h, adj)[0])
    assert np.max(np.abs(got - np.concatenate(want, axis=1))) <= 1e-10


def test_rgat_unit_gates_bitwise_equal_ungated():
    rng = np.random.default_rng(6)
    layer = RGATLayer(6, 5, rng)
    h = Tensor(rng.normal(size=(2, 7, 6)))
    adj = np.stack([_random_joint_adj(rng, 6) for _ in range(2)])
    a = layer(h, adj).data
    b = layer(h, adj, Tensor(np.ones((2, 7)))).data
    assert np.array_equal(a, b)


def test_rgat_single_neighbour_takes_all_weight():
    rng = np.random.default_rng(7)
    layer = RGATLayer(3, 4, rng)
    h = rng.normal(size=(2, 3))
    adj = np.zeros((3, 2, 2), dtype=bool)
    adj[0, 1, 0] = True       # node 1 hears only node 0
    adj[2, 0, 0] = True
    for g in (1.0, 0.3, 1e-4):
        out = layer(Tensor(h), adj, Tensor([g, 1.0])).data
        assert np.allclose(out[1], np.maximum(h[0] @ layer.wv.data, 0), rtol=0, atol=1e-14)


def test_rgat_strict_degenerate_neighbourhood():
    rng = np.random.default_rng(8)
    layer = RGATLayer(3, 4, rng)
    adj = np.zeros((3, 3, 3), dtype=bool)
    adj[0, 2, 0] = adj[0, 2, 1] = True
    adj[2, [0, 1], [0, 1]] = True
    h = Tensor(rng.normal(size=(3, 3)))
    with pytest.raises(DegenerateNeighborhood):
        layer(h, adj, Tensor([0.0, 0.0, 1.0]), strict=True)
    # non-strict: the floor keeps it finite and the pruned row comes out as zero
    out = layer(h, adj, Tensor([0.0, 0.0, 1.0])).data
    assert np.all(np.isfinite(out)) and np.all(out[2] == 0)


@given(st.lists(st.floats(-8, 8), min_size=2, max_size=8), st.data())
def test_gated_rows_are_distributions(scores, data):
    n = len(scores)
    gates = data.draw(st.lists(st.floats(1e-3, 1.0), min_size=n, max_size=n))
    p = nm.masked_softmax(Tensor(scores), np.ones(n, dtype=bool), Tensor(gates)).data
    assert np.all(p >= 0) and abs(p.sum() - 1) <= 1e-12


@given(st.lists(st.floats(-8, 8), min_size=2, max_size=8), st.floats(0.01, 0.99), st.floats(0.0, 1.0),
       st.integers(0, 7))
def test_gate_monotone(scores, g0, bump, pick):
    n = len(scores)
    u = pick % n
    gates = np.full(n, g0)
    p_lo = nm.masked_softmax(Tensor(scores), np.ones(n, bool), Tensor(gates)).data[u]
    gates[u] = g0 + bump * (1 - g0)
    p_hi = nm.masked_softmax(Tensor(scores), np.ones(n, bool), Tensor(gates)).data[u]
    assert p_hi >= p_lo - 1e-15


# -- DGP gate ---------------------------------------------------------------------------------

def test_gate_zero_parameters_half():
    gate = DGPGate(4, 3, np.random.default_rng(0))
    for p in gate.parameters():
        p.data[:] = 0
    g = gate(Tensor(np.ones((1, 5, 4))), Tensor(np.ones((1, 2, 4)))).data
    assert g.shape == (1, 2, 5) and np.all(g == 0.5)


def test_gate_hand_computed_dim2():
    gate = DGPGate(2, 2, np.random.default_rng(0))
    gate.w_e.data = np.array([[1.0, 0.0], [0.0, 1.0]])
    gate.w_d.data = np.array([[0.5, 0.0], [0.0, -1.0]])
    gate.w_g.data = np.array([[2.0], [1.0]])
    hv, ht = np.array([0.2, 0.4]), np.array([1.0, 0.1])
    pre = hv @ gate.w_e.data + ht @ gate.w_d.data          # [0.7, 0.3]
    want = 1 / (1 + math.exp(-(2 * math.tanh(0.7) + math.tanh(0.3))))
    assert np.allclose(pre, [0.7, 0.3])
    got = gate(Tensor(hv.reshape(1, 1, 2)), Tensor(ht.reshape(1, 1, 2))).data[0, 0, 0]
    assert abs(got - want) < 1e-15


def test_gate_saturates_to_one():
    rng = np.random.default_rng(1)
    gate = DGPGate(3, 4, rng)
    nodes, state = Tensor(rng.normal(size=(1, 3, 3))), Tensor(rng.normal(size=(1, 1, 3)))
    logit = (np.tanh(nodes.data @ gate.w_e.data + state.data @ gate.w_d.data) @ gate.w_g.data)[0, :, 0]
    gate.w_g.data = gate.w_g.data * np.sign(logit[0])
    prev = 0.0
    for scale in (1, 4, 16, 64):
        g = DGPGate(3, 4, rng)
        g.w_e.data, g.w_d.data, g.w_g.data = gate.w_e.data, gate.w_d.data, gate.w_g.data * scale
        val = g(nodes, state).data[0, 0, 0]
        assert val >= prev
        prev = val
    assert prev > 1 - 1e-6


@given(st.integers(0, 1000))
def test_gate_strictly_inside_unit_interval(seed):
    rng = np.random.default_rng(seed)
    gate = DGPGate(4, 3, rng)
    g = gate(Tensor(rng.normal(size=(2, 6, 4))), Tensor(rng.normal(size=(2, 3, 4)))).data
    assert np.all((g > 0) & (g < 1))


# -- SACA ----------------------------------------------------------------------------------------

def _saca(layers=2, d=6, m=5, seed=0):
    cfg = ModelConfig(vocab_size=10, model_dim=d, heads=1, saca_dim=m, gate_dim=4, saca_layers=layers)
    rng = np.random.default_rng(seed)
    saca = SACA(cfg, rng)
    if saca.w_out is not None:
        saca.w_out.data = rng.normal(size=saca.w_out.shape)
    for layer in saca.layers:
        layer.rel.data = rng.normal(size=layer.rel.shape)
    return saca, DGPGate(d, 4, rng)


def _token_graph(nodes=("a b", "c"), triples=((0, "r", 1),)):
    word_ids = {}
    enc = lambda s: [word_ids.setdefault(w, len(word_ids) + 4) for w in s.split()]
    from sacagen.graph import tokenize_graph
    return tokenize_graph(levi_transform(MultiRelGraph(nodes, triples)), enc)


def test_saca_zero_layers_returns_state():
    saca, _ = _saca(layers=0)
    state = np.arange(6.0)
    ctx, _ = saca_forward(saca, None, Tensor(np.ones((4, 6))), _token_graph(), Tensor(state), use_dgp=False)
    assert np.array_equal(ctx.data, state)


def test_saca_one_token_closed_form():
    saca, _ = _saca(layers=1)
    layer = saca.layers[0]
    rng = np.random.default_rng(9)
    h_tok, h_d = rng.normal(size=6), rng.normal(size=6)
    tg = _token_graph(("a",), ())
    ctx, _ = saca_forward(saca, None, Tensor(h_tok.reshape(1, 6)), tg, Tensor(h_d), use_dgp=False)
    q = h_d @ layer.wq.data
    s_tok = q @ (h_tok @ layer.wk.data + layer.rel.data[REL_INDEX[DEFAULT]]) / math.sqrt(5)
    s_d = q @ (h_d @ layer.wk.data + layer.rel.data[REL_INDEX["self"]]) / math.sqrt(5)
    a_tok = 1 / (1 + math.exp(s_d - s_tok))
    out = np.maximum(a_tok * h_tok @ layer.wv.data + (1 - a_tok) * h_d @ layer.wv.data, 0) @ saca.w_out.data
    assert np.max(np.abs(ctx.data - out)) <= 1e-12


@pytest.mark.parametrize("layers", [1, 2])
def test_zero_gate_removes_node_influence(layers):
    saca, gate = _saca(layers=layers)
    tg = _token_graph(("a b", "c d", "e"), ((0, "r", 1), (1, "s", 2)))
    n = tg.num_nodes
    rng = np.random.default_rng(10)
    nodes = rng.normal(size=(n, 6))
    state = Tensor(rng.normal(size=6))
    g = rng.uniform(0.2, 1, n)
    g[2] = 0.0
    base, _ = saca_forward(saca, gate, Tensor(nodes), tg, state, gate_override=g)
    nodes[2] += rng.normal(size=6) * 10
    moved, _ = saca_forward(saca, gate, Tensor(nodes), tg, state, gate_override=g)
    assert np.max(np.abs(base.data - moved.data)) <= 1e-12


def test_saca_context_permutation_invariant():
    saca, gate = _saca()
    g = MultiRelGraph(("a b", "c", "d e f"), ((0, "r", 1), (2, "s", 0), (1, "r", 2)))
    rng = np.random.default_rng(11)
    state = Tensor(rng.normal(size=6))
    emb = {}

    def run(graph):
        tg = _token_graph(graph.nodes, graph.triples)
        ne = len(graph.nodes)
        # node states depend on the word and on which Levi node owns it, never on indices
        rows, seen = [], {}
        for own in tg.token_owner:
            if own < ne:
                ident, words = ("E", graph.nodes[own]), graph.nodes[own].split()
            else:
                h, r, t = graph.triples[own - ne]
                ident, words = ("R", graph.nodes[h], r, graph.nodes[t]), r.split()
            pos = seen.get(own, 0)
            seen[own] = pos + 1
            rows.append(emb.setdefault((ident, words[pos]), rng.normal(size=6)))
        return saca_forward(saca, gate, Tensor(np.array(rows)), tg, state)[0].data

    base = run(g)
    perm = [2, 0, 1]
    inv = np.argsort(perm)
    g2 = MultiRelGraph(tuple(g.nodes[i] for i in perm), tuple((int(inv[h]), r, int(inv[t])) for h, r, t in g.triples))
    assert np.max(np.abs(base - run(g2))) <= 1e-12


# -- whole decoder path --------------------------------------------------------------------------------

def test_teacher_forced_saca_matches_per_step_loop():
    v = toy_vocab()
    m = small_model(v)
    b = toy_batch(v)
    out = m(b)
    ctx, gates = m.context(out.memory, out.states, b.joint_adj)
    for k, tg in enumerate(b.graphs):
        n = tg.num_nodes
        for t in range(b.tgt_in.shape[1]):
            c, g = saca_forward(m.saca, m.gate, Tensor(out.memory.data[k, :n]), tg, Tensor(out.states.data[k, t]))
            assert np.max(np.abs(c.data - ctx.data[k, t])) <= 1e-10
            assert np.max(np.abs(g.data - gates.data[k, t, :n])) <= 1e-10


def test_prediction_head_zero_context_is_baseline():
    head = PredictionHead(6, 9, np.random.default_rng(0))
    s = Tensor(np.random.default_rng(1).normal(size=(2, 3, 6)))
    a = head(s).data
    assert np.array_equal(a, head(s, Tensor(np.zeros((2, 3, 6)))).data)
    assert a.shape == (2, 3, 9)
    p = nm.softmax(Tensor(a)).data
    assert np.allclose(p.sum(-1), 1, atol=1e-12)


def test_causal_logits_ignore_future_tokens():
    v = toy_vocab()
    m = small_model(v)
    b = toy_batch(v)
    before = m(b).logits.data
    b.tgt_in[:, 3:] = (b.tgt_in[:, 3:] + 5) % len(v)
    after = m(b).logits.data
    assert np.array_equal(before[:, :3], after[:, :3])
    assert not np.array_equal(before[:, 3:], after[:, 3:])


def test_all_gates_one_equals_saca_only_bitwise():
    v = toy_vocab()
    full = small_model(v)
    saca_only = small_model(v, use_dgp=False)
    copy_shared(full, saca_only)
    b = toy_batch(v)
    assert np.array_equal(full(b, gate_override=1.0).logits.data, saca_only(b).logits.data)


def test_zero_saca_output_equals_baseline():
    v = toy_vocab()
    full = small_model(v)
    base = small_model(v, use_saca=False, use_dgp=False)
    copy_shared(full, base)
    full.saca.w_out.data[:] = 0
    b = toy_batch(v)
    assert np.array_equal(full(b).logits.data, base(b).logits.data)
