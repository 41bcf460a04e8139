"""Graph representations: input graph, Levi graph, token graph, joint graph.

The chain is::

    MultiRelGraph --levi_transform--> LeviGraph --tokenize_graph--> TokenGraph
                                                   --build_joint_graph--> JointGraph

All graph values are frozen dataclasses built from tuples, so they can be
shared freely.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

DEFAULT, REVERSE, SELF = "default", "reverse", "self"
RELATIONS = (DEFAULT, REVERSE, SELF)
REL_INDEX = {r: i for i, r in enumerate(RELATIONS)}

ENTITY, RELATION = "entity", "relation"


class InvalidGraph(ValueError):
    pass


class EmptyNodeLabel(ValueError):
    pass


@dataclass(frozen=True)
class MultiRelGraph:
    nodes: tuple
    triples: tuple

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(str(n) for n in self.nodes))
        object.__setattr__(self, "triples", tuple((int(h), str(r), int(t)) for h, r, t in self.triples))
        if not self.nodes:
            raise InvalidGraph("graph needs at least one node")
        n = len(self.nodes)
        for k, (h, _, t) in enumerate(self.triples):
            if not (0 <= h < n and 0 <= t < n):
                raise InvalidGraph(f"triple {k} ({h}, {t}) out of range for {n} nodes")

    @property
    def relation_labels(self) -> frozenset:
        return frozenset(r for _, r, _ in self.triples)

    def __len__(self) -> int:
        return len(self.nodes)


@dataclass(frozen=True)
class LeviGraph:
    nodes: tuple  # (label, kind)
    edges: tuple  # (src, dst, rel) with rel in {default, reverse}

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)


@dataclass(frozen=True)
class TokenGraph:
    tokens: tuple       # token ids
    token_owner: tuple  # token position -> Levi node index
    edges: tuple        # (src, dst, rel) with rel in {default, reverse, self}

    @property
    def num_nodes(self) -> int:
        return len(self.tokens)

    def spans(self) -> list:
        """(start, stop) token span of every Levi node, in Levi order."""
        out: dict = {}
        for i, owner in enumerate(self.token_owner):
            lo, _ = out.get(owner, (i, i))
            out[owner] = (lo, i + 1)
        return [out[k] for k in sorted(out)]


@dataclass(frozen=True)
class JointGraph:
    base: TokenGraph
    context_index: int
    extra_edges: tuple

    @property
    def num_nodes(self) -> int:
        return self.base.num_nodes + 1

    @property
    def edges(self) -> tuple:
        return self.base.edges + self.extra_edges

    def remove_context(self) -> TokenGraph:
        return self.base


@dataclass(frozen=True)
class GraphStats:
    size: int
    diameter: int
    reentrancies: int


def levi_transform(g: MultiRelGraph) -> LeviGraph:
    """One relation node per triple; default edges head->rel->tail plus their reverses."""
    nodes = [(label, ENTITY) for label in g.nodes]
    edges = []
    for h, r, t in g.triples:
        k = len(nodes)
        nodes.append((r, RELATION))
        edges.append((h, k, DEFAULT))
        edges.append((k, t, DEFAULT))
        edges.append((k, h, REVERSE))
        edges.append((t, k, REVERSE))
    return LeviGraph(tuple(nodes), tuple(edges))


def tokenize_graph(g: LeviGraph, vocab) -> TokenGraph:
    """Expand every Levi node into its tokens.

    ``vocab`` is a :class:`~sacagen.ingest.Vocab` or any callable mapping a
    label to token ids.  Tokens of a span are chained left to right with a
    default/reverse pair; a Levi edge (a, b) becomes the complete bipartite set
    of edges between the two spans, keeping its relation type; every token gets
    one self edge.
    """
    encode = vocab.encode if hasattr(vocab, "encode") else vocab
    tokens, owner, spans = [], [], []
    for idx, (label, _) in enumerate(g.nodes):
        ids = list(encode(label))
        if not ids:
            raise EmptyNodeLabel(f"node {idx} has an empty label")
        start = len(tokens)
        tokens.extend(ids)
        owner.extend([idx] * len(ids))
        spans.append(range(start, len(tokens)))
    edges = []
    for span in spans:
        for a, b in zip(span, span[1:]):
            edges.append((a, b, DEFAULT))
            edges.append((b, a, REVERSE))
    for src, dst, rel in g.edges:
        for a in spans[src]:
            for b in spans[dst]:
                edges.append((a, b, rel))
    edges.extend((i, i, SELF) for i in range(len(tokens)))
    return TokenGraph(tuple(tokens), tuple(owner), tuple(edges))


def build_joint_graph(g: TokenGraph) -> JointGraph:
    d = g.num_nodes
    extra = []
    for i in range(d):
        extra.append((i, d, DEFAULT))
        extra.append((d, i, REVERSE))
    extra.append((d, d, SELF))
    return JointGraph(g, d, tuple(extra))


def relation_adjacency(num_nodes: int, edges, size: int | None = None) -> np.ndarray:
    """Dense ``(R, size, size)`` edge counts with ``A[r, dst, src]``."""
    size = num_nodes if size is None else size
    adj = np.zeros((len(RELATIONS), size, size), dtype=np.int8)
    for src, dst, rel in edges:
        adj[REL_INDEX[rel], dst, src] += 1
    return adj


def mean_aggregation(adj: np.ndarray) -> np.ndarray:
    """Row-normalise each relation slice by its in-neighbour count (0 rows stay 0)."""
    a = (adj > 0).astype(np.float64)
    deg = a.sum(axis=-1, keepdims=True)
    return np.divide(a, deg, out=np.zeros_like(a), where=deg > 0)


def _undirected_neighbours(g: MultiRelGraph) -> list:
    nbrs = [set() for _ in g.nodes]
    for h, _, t in g.triples:
        if h != t:
            nbrs[h].add(t)
            nbrs[t].add(h)
    return nbrs


def bfs_distances(nbrs: list, source: int) -> dict:
    dist = {source: 0}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in nbrs[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def graph_stats(g: MultiRelGraph) -> GraphStats:
    nbrs = _undirected_neighbours(g)
    diameter = 0
    for s in range(len(g.nodes)):
        diameter = max(diameter, max(bfs_distances(nbrs, s).values()))
    parents = [set() for _ in g.nodes]
    for h, _, t in g.triples:
        parents[t].add(h)
    reent = sum(1 for p in parents if len(p) >= 2)
    return GraphStats(size=len(g.nodes), diameter=diameter, reentrancies=reent)


def dump_graph(g) -> str:
    """Deterministic adjacency listing, one line per node, sorted by index."""
    if isinstance(g, MultiRelGraph):
        labels = list(g.nodes)
        edges = [(h, t, r) for h, r, t in g.triples]
    elif isinstance(g, LeviGraph):
        labels = [f"{lab} [{kind}]" for lab, kind in g.nodes]
        edges = list(g.edges)
    elif isinstance(g, TokenGraph):
        labels = [f"tok={tok} owner={own}" for tok, own in zip(g.tokens, g.token_owner)]
        edges = list(g.edges)
    elif isinstance(g, JointGraph):
        labels = [f"tok={tok} owner={own}" for tok, own in zip(g.base.tokens, g.base.token_owner)]
        labels.append("<context>")
        edges = list(g.edges)
    else:
        raise TypeError(f"cannot dump {type(g).__name__}")
    out = {i: [] for i in range(len(labels))}
    for src, dst, rel in edges:
        out[src].append((dst, rel))
    lines = []
    for i, lab in enumerate(labels):
        targets = " ".join(f"{dst}:{rel}" for dst, rel in sorted(out[i]))
        lines.append(f"{i}\t{lab}\t-> {targets}".rstrip())
    return "\n".join(lines) + "\n"
