import json

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, strategies as st
from networkx.algorithms.isomorphism import categorical_multiedge_match, categorical_node_match

from sacagen.graph import MultiRelGraph, graph_stats
from sacagen.ingest import (
    BOS, EOS, PAD, UNK, DanglingVariable, EmptyInput, Example, IndexOutOfRange, MalformedPenman,
    MalformedRecord, UnbalancedParens, Vocab, build_vocab, collate, corpus_of, make_batches,
    parse_penman, read_amr_file, read_kg_records, to_penman, write_kg_records,
)
from sacagen.synthetic import memorisation_set


def nxgraph(g: MultiRelGraph):
    out = nx.MultiDiGraph()
    for i, lab in enumerate(g.nodes):
        out.add_node(i, label=lab)
    for h, r, t in g.triples:
        out.add_edge(h, t, role=r)
    return out


def isomorphic(a, b):
    return nx.is_isomorphic(nxgraph(a), nxgraph(b), node_match=categorical_node_match("label", None),
                            edge_match=categorical_multiedge_match("role", None))


# -- PENMAN ---------------------------------------------------------------------------

def test_penman_single_edge():
    g = parse_penman("(w / want-01 :ARG0 (b / boy))")
    assert g.nodes == ("want-01", "boy")
    assert g.triples == ((0, "ARG0", 1),)


def test_penman_reentrancy():
    g = parse_penman("(w / want-01 :ARG0 (b / boy) :ARG1 (g / go-02 :ARG0 b))")
    assert len(g.nodes) == 3 and len(g.triples) == 3
    assert (2, "ARG0", 1) in g.triples
    assert graph_stats(g).reentrancies == 1


def test_penman_constants_are_leaf_nodes():
    g = parse_penman('(s / say-01 :polarity - :quant 5 :name (n / name :op1 "New York"))')
    assert set(g.nodes) == {"say-01", "-", "5", "name", "New York"}
    assert ("New York" in g.nodes) and len(g.triples) == 4


def test_penman_inverse_role_kept_literally():
    g = parse_penman("(b / boy :ARG0-of (w / want-01))")
    assert g.triples == ((0, "ARG0-of", 1),)


@pytest.mark.parametrize("text, exc, offset", [
    ("(w / want-01", UnbalancedParens, 12),
    ("(w / want-01 :ARG0 (b / boy)))", UnbalancedParens, 29),
    (")", UnbalancedParens, 0),
    ("", EmptyInput, 0),
    ("   # just a comment\n", EmptyInput, 0),
    ("(w / want-01 :ARG0 x2)", DanglingVariable, 19),
    ("(w / é :ARG0 q)", DanglingVariable, 14),  # offsets count bytes, not characters
])
def test_penman_errors_carry_byte_offset(text, exc, offset):
    with pytest.raises(exc) as e:
        parse_penman(text)
    assert e.value.offset == offset


def test_penman_duplicate_variable():
    with pytest.raises(MalformedPenman):
        parse_penman("(a / x :r (a / y))")


AMR_SAMPLES = [
    "(w / want-01 :ARG0 (b / boy) :ARG1 (g / go-02 :ARG0 b))",
    "(p / possible-01 :ARG1 (s / see-01 :ARG0 (i / i) :ARG1 (t / tree :mod (b / big)) :polarity -))",
    "(a / and :op1 (x / x1) :op2 (y / y1 :ARG0-of (z / z1 :ARG1 x)) :op3 y)",
]


@pytest.mark.parametrize("text", AMR_SAMPLES)
def test_penman_round_trip_isomorphic(text):
    g = parse_penman(text)
    back = parse_penman(to_penman(g))
    assert isomorphic(g, back)


@st.composite
def rooted_graphs(draw):
    n = draw(st.integers(1, 12))
    labels = draw(st.lists(st.sampled_from(["want-01", "boy", "go", "New York", "-", "5"]), min_size=n, max_size=n))
    # a spanning tree from node 0 plus a few extra (reentrant) edges
    triples = [(draw(st.integers(0, k - 1)), draw(st.sampled_from(["ARG0", "ARG1", "mod", "op1"])), k)
               for k in range(1, n)]
    extra = draw(st.lists(st.tuples(st.integers(0, n - 1), st.sampled_from(["ARG2", "ARG0-of"]),
                                    st.integers(0, n - 1)), max_size=4))
    return MultiRelGraph(tuple(labels), tuple(triples + extra))


@given(rooted_graphs())
def test_penman_round_trip_property(g):
    text = to_penman(g)
    back = parse_penman(text)
    assert isomorphic(g, back)
    # reentrancy = variables referenced again after their definition
    import re
    defined = set(re.findall(r"\((v\d+) /", text))
    refs = re.findall(r":\S+ (v\d+)", text)
    parents = {}
    for h, _, t in back.triples:
        parents.setdefault(t, set()).add(h)
    assert graph_stats(back).reentrancies == sum(len(p) >= 2 for p in parents.values())
    assert set(refs) <= defined


def test_reentrancy_equals_multiply_referenced_variables():
    text = "(a / and :op1 (x / x1) :op2 (y / y1 :ARG0 x) :op3 (z / z1 :ARG1 x :ARG2 y))"
    g = parse_penman(text)
    # x is referenced by a, y and z; y by a and z
    assert graph_stats(g).reentrancies == 2


def test_read_amr_file(tmp_path):
    p = tmp_path / "a.txt"
    p.write_text("# ::id s1\n# ::snt The boy wants to go.\n"
                 "(w / want-01 :ARG0 (b / boy)\n   :ARG1 (g / go-02 :ARG0 b))\n\n"
                 "# ::snt Hi\n(h / hi)\n", encoding="utf-8")
    exs = read_amr_file(p)
    assert [e.id for e in exs] == ["s1", "1"]
    assert exs[0].target_text == "The boy wants to go." and len(exs[0].graph.triples) == 3


# -- KG records ---------------------------------------------------------------------------

def _write(tmp_path, lines):
    p = tmp_path / "kg.jsonl"
    p.write_text("".join(ln + "\n" for ln in lines), encoding="utf-8")
    return p


def test_kg_single_record(tmp_path):
    rec = {"nodes": ["Paris", "France"], "triples": [[0, "capital of", 1]], "text": "Paris is in France"}
    exs = read_kg_records(_write(tmp_path, [json.dumps(rec)]))
    assert len(exs) == 1 and exs[0].graph.triples == ((0, "capital of", 1),)


def test_kg_index_out_of_range(tmp_path):
    good = json.dumps({"nodes": ["a"], "triples": [], "text": "a"})
    bad = json.dumps({"nodes": ["a", "b", "c"], "triples": [[0, "r", 9]], "text": "x"})
    with pytest.raises(IndexOutOfRange) as e:
        read_kg_records(_write(tmp_path, [good, bad]))
    assert e.value.line == 2


@pytest.mark.parametrize("line", [
    "{not json", '{"nodes": ["a"], "text": "x"}', '{"nodes": [], "triples": [], "text": "x"}',
    '{"nodes": ["a"], "triples": [[0, 1, 0]], "text": "x"}', "[1, 2]",
])
def test_kg_malformed(tmp_path, line):
    with pytest.raises(MalformedRecord) as e:
        read_kg_records(_write(tmp_path, [line]))
    assert e.value.line == 1


def test_kg_round_trip_bit_exact(tmp_path):
    exs = memorisation_set(50, seed=3)
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_kg_records(a, exs)
    back = read_kg_records(a)
    assert len(back) == 50
    write_kg_records(b, back)
    assert a.read_bytes() == b.read_bytes()
    assert [e.graph for e in back] == [e.graph for e in exs]


# -- vocabulary ------------------------------------------------------------------------------

def test_vocab_order_and_min_freq():
    v = build_vocab(["a a b"])
    assert v.itos == ["<pad>", "<bos>", "<eos>", "<unk>", "a", "b"]
    v2 = build_vocab(["a a b"], min_freq=2)
    assert v2.itos[4:] == ["a"] and v2.token_id("b") == UNK
    assert build_vocab(["z y y x"]) == build_vocab(["z y y x"])
    assert build_vocab(["c b a"]).itos[4:] == ["a", "b", "c"]


def test_vocab_specials_fixed():
    v = build_vocab(["x"])
    assert (v.token_id("<pad>"), v.token_id("<bos>"), v.token_id("<eos>"), v.token_id("<unk>")) == (0, 1, 2, 3)


def test_vocab_file_round_trip(tmp_path):
    v = build_vocab(["the cat sat on the mat"])
    v.save(tmp_path / "vocab.txt")
    lines = (tmp_path / "vocab.txt").read_text().splitlines()
    assert v.token_id(lines[0]) == 4 and v.token_id(lines[2]) == 6
    assert Vocab.load(tmp_path / "vocab.txt") == v


def test_empty_corpus_rejected():
    with pytest.raises(ValueError):
        build_vocab([])


@given(st.lists(st.sampled_from(["The", "cat", "SAT", "on", "mat", "."]), min_size=1, max_size=12))
def test_encode_decode_inverse_up_to_lowercasing(words):
    text = " ".join(words)
    v = build_vocab([text])
    ids = v.encode(text)
    assert v.decode(ids + [EOS, 5]) == text.lower()
    ex = Example(MultiRelGraph(("a",), ()), text).encoded(v)
    assert ex.target_ids[-1] == EOS and len(ex.target_ids) == len(words) + 1


# -- batches ------------------------------------------------------------------------------------

def _examples(k):
    return [Example(MultiRelGraph(("a b",) * (i + 1), ((0, "r", i),) if i else ()), "w " * (i + 1))
            for i in range(k)]


def test_batch_sizes_and_determinism():
    exs = _examples(5)
    v = build_vocab(corpus_of(exs))
    bs = make_batches(exs, 4, v, shuffle_seed=11)
    assert [b.size for b in bs] == [4, 1]
    again = make_batches(exs, 4, v, shuffle_seed=11)
    assert [b.indices for b in bs] == [b.indices for b in again]
    assert sorted(i for b in bs for i in b.indices) == list(range(5))
    with pytest.raises(ValueError):
        make_batches(exs, 0, v)


def test_batch_padding_counts():
    exs = _examples(4)
    v = build_vocab(corpus_of(exs))
    b = collate(exs, v)
    lengths = [len(v.encode(e.target_text)) + 1 for e in exs]
    assert int((b.tgt_mask == 0).sum()) == sum(max(lengths) - n for n in lengths)
    assert np.all(b.tgt_out[b.tgt_mask == 0] == PAD)
    assert np.all(b.tgt_in[:, 0] == BOS)
    assert np.array_equal(b.tgt_in[:, 1:][b.tgt_mask[:, 1:] > 0], b.tgt_out[:, :-1][b.tgt_mask[:, 1:] > 0])
    sizes = [g.num_nodes for g in b.graphs]
    assert b.node_mask.sum(axis=1).tolist() == sizes
    n = b.node_ids.shape[1]
    # context node at the shared slot n links to every real token and nothing padded
    for k, s in enumerate(sizes):
        assert b.joint_adj[k, 0, n, :s].all() and not b.joint_adj[k, :, n, s:n].any()
        assert b.joint_adj[k, 1, :s, n].all()
        assert not b.rgcn_adj[k, :, s:, :].any() and not b.rgcn_adj[k, :, :, s:].any()


def test_positions_restart_per_label():
    ex = Example(MultiRelGraph(("new york city", "paris"), ((0, "in", 1),)), "x")
    v = build_vocab(corpus_of([ex]))
    b = collate([ex], v)
    assert b.positions[0].tolist() == [0, 1, 2, 0, 0]
