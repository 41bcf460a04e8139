"""From a PENMAN string to the graphs the model actually sees.

Run: python demos/01_graph_pipeline.py
"""
from sacagen import build_joint_graph, build_vocab, graph_stats, levi_transform, parse_penman, tokenize_graph
from sacagen.graph import RELATIONS

amr = "(w / want-01 :ARG0 (b / boy) :ARG1 (g / go-02 :ARG0 b))"
g = parse_penman(amr)
print("input graph")
print("  nodes  ", g.nodes)
print("  triples", g.triples)
st = graph_stats(g)
print(f"  size {st.size}, diameter {st.diameter}, reentrancies {st.reentrancies} (the boy is re-used)")

# each triple becomes its own relation node, so labelled edges turn into plain nodes
lg = levi_transform(g)
print(f"\nLevi graph: {lg.num_nodes} nodes = {len(g.nodes)} concepts + {len(g.triples)} relation nodes, "
      f"{len(lg.edges)} edges (forward + reverse for both halves of every triple)")
for k, (label, kind) in enumerate(lg.nodes):
    print(f"  {k:2d} {kind:<9} {label}")

# labels are split into word tokens; tokens of one node are chained, tokens of linked nodes all connect
vocab = build_vocab([" ".join(label for label, _ in lg.nodes)])
tg = tokenize_graph(lg, vocab)
print(f"\ntoken graph: {tg.num_nodes} tokens, {len(tg.edges)} edges")
print("  tokens", [vocab.decode([t], strip_special=False) for t in tg.tokens])

# the joint graph adds the decoder state as one extra node linked to every token
jg = build_joint_graph(tg)
counts = {r: sum(1 for *_, rel in jg.edges if rel == r) for r in RELATIONS}
print(f"\njoint graph: {jg.num_nodes} nodes (context node at index {jg.context_index}), edges by relation {counts}")
