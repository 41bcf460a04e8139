"""Reading AMR and KG inputs, vocabularies, and padded training batches."""
from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .graph import (
    MultiRelGraph, TokenGraph, InvalidGraph, levi_transform, tokenize_graph,
    build_joint_graph, relation_adjacency, mean_aggregation, RELATIONS,
)

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ("<pad>", "<bos>", "<eos>", "<unk>")


def tokenize(text: str, lowercase: bool = True) -> list:
    return (text.lower() if lowercase else text).split()


class Vocab:
    def __init__(self, tokens: Sequence[str] = (), lowercase: bool = True):
        self.lowercase = lowercase
        self.itos = list(SPECIALS)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        for t in tokens:
            if t in self.stoi:
                raise ValueError(f"duplicate vocabulary token {t!r}")
            self.stoi[t] = len(self.itos)
            self.itos.append(t)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos and self.lowercase == other.lowercase

    def token_id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def encode(self, text: str) -> list:
        return [self.stoi.get(t, UNK) for t in tokenize(text, self.lowercase)]

    def decode(self, ids: Iterable[int], strip_special: bool = True) -> str:
        out = []
        for i in ids:
            i = int(i)
            if i == EOS and strip_special:
                break
            if strip_special and i in (PAD, BOS):
                continue
            out.append(self.itos[i])
        return " ".join(out)

    def save(self, path) -> None:
        lines = self.itos[len(SPECIALS):]
        Path(path).write_text("".join(t + "\n" for t in lines), encoding="utf-8")

    @classmethod
    def load(cls, path, lowercase: bool = True) -> "Vocab":
        text = Path(path).read_text(encoding="utf-8")
        return cls([ln for ln in text.split("\n") if ln], lowercase=lowercase)


def build_vocab(corpus: Iterable[str], min_freq: int = 1, lowercase: bool = True) -> Vocab:
    """Whitespace tokens with count >= min_freq, most frequent first, ties alphabetical."""
    counts = Counter()
    n = 0
    for text in corpus:
        counts.update(tokenize(text, lowercase))
        n += 1
    if n == 0:
        raise ValueError("empty corpus")
    kept = [t for t, c in counts.items() if c >= min_freq and t not in SPECIALS]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocab(kept, lowercase=lowercase)


# -- examples -----------------------------------------------------------------

@dataclass
class Example:
    graph: MultiRelGraph
    target_text: str
    target_ids: tuple = ()
    id: str = ""

    def encoded(self, vocab: Vocab) -> "Example":
        ids = tuple(vocab.encode(self.target_text)) + (EOS,)
        return Example(self.graph, self.target_text, ids, self.id)


def encode_examples(examples: Iterable[Example], vocab: Vocab) -> list:
    return [ex.encoded(vocab) for ex in examples]


def corpus_of(examples: Iterable[Example]) -> Iterable[str]:
    """Every string the vocabulary should cover: node labels, relation labels, texts."""
    for ex in examples:
        yield from ex.graph.nodes
        yield from (r for _, r, _ in ex.graph.triples)
        yield ex.target_text


# -- PENMAN -----------------------------------------------------------------------

class PenmanError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte {offset}")
        self.offset = offset


class UnbalancedParens(PenmanError):
    pass


class DanglingVariable(PenmanError):
    pass


class EmptyInput(PenmanError):
    pass


class MalformedPenman(PenmanError):
    pass


_TOKEN = re.compile(r'\s+|#[^\n]*|(?P<lp>\()|(?P<rp>\))|(?P<slash>/)|(?P<role>:[^\s()"]*)'
                    r'|(?P<str>"(?:[^"\\]|\\.)*")|(?P<sym>[^\s()/"]+)')
_VARLIKE = re.compile(r"^[a-z][0-9]*$")


def _unquote(tok: str) -> str:
    return re.sub(r"\\(.)", r"\1", tok[1:-1])


def _lex(s: str) -> list:
    out, pos = [], 0
    while pos < len(s):
        m = _TOKEN.match(s, pos)
        if m is None:  # unterminated string
            raise MalformedPenman("unterminated string", len(s[:pos].encode("utf-8")))
        if m.lastgroup:
            out.append((m.lastgroup, m.group(), pos))
        pos = m.end()
    return out


def parse_penman(s: str) -> MultiRelGraph:
    """Parse one PENMAN graph.

    Concepts and constants become nodes; ``:ROLE`` becomes the relation label
    (without the colon, inverse roles kept literally); a re-used variable points
    back at the node that defined it.
    """
    toks = _lex(s)

    def boff(char_pos: int) -> int:
        return len(s[:char_pos].encode("utf-8"))

    end = boff(len(s))
    if not toks:
        raise EmptyInput("no graph in input", 0)

    labels: list = []
    triples: list = []  # (head, role, target) with target int or ("ref", var, pos)
    variables: dict = {}
    i = 0

    def peek():
        return toks[i] if i < len(toks) else None

    def take(kind: str):
        nonlocal i
        t = peek()
        if t is None:
            raise UnbalancedParens("unexpected end of input", end)
        if t[0] != kind:
            raise MalformedPenman(f"expected {kind}, found {t[1]!r}", boff(t[2]))
        i += 1
        return t

    def node() -> int:
        nonlocal i
        take("lp")
        t = peek()
        if t is None:
            raise UnbalancedParens("unexpected end of input", end)
        if t[0] != "sym":
            raise MalformedPenman(f"expected variable, found {t[1]!r}", boff(t[2]))
        i += 1
        var = t[1]
        if var in variables:
            raise MalformedPenman(f"variable {var!r} defined twice", boff(t[2]))
        idx = len(labels)
        variables[var] = idx
        labels.append(var)
        nxt = peek()
        if nxt is not None and nxt[0] == "slash":
            i += 1
            c = peek()
            if c is None:
                raise UnbalancedParens("unexpected end of input", end)
            if c[0] not in ("sym", "str"):
                raise MalformedPenman(f"expected concept, found {c[1]!r}", boff(c[2]))
            i += 1
            labels[idx] = _unquote(c[1]) if c[0] == "str" else c[1]
        while True:
            t = peek()
            if t is None:
                raise UnbalancedParens("unexpected end of input", end)
            if t[0] == "rp":
                i += 1
                return idx
            if t[0] != "role":
                raise MalformedPenman(f"expected role or ')', found {t[1]!r}", boff(t[2]))
            i += 1
            role = t[1][1:]
            if not role:
                raise MalformedPenman("empty role", boff(t[2]))
            tgt = peek()
            if tgt is None:
                raise UnbalancedParens("unexpected end of input", end)
            if tgt[0] == "lp":
                k = len(triples)
                triples.append(None)
                child = node()
                triples[k] = (idx, role, child)
            elif tgt[0] == "str":
                i += 1
                triples.append((idx, role, len(labels)))
                labels.append(_unquote(tgt[1]))
            elif tgt[0] == "sym":
                i += 1
                triples.append((idx, role, ("ref", tgt[1], tgt[2])))
            else:
                raise MalformedPenman(f"unexpected {tgt[1]!r} after role", boff(tgt[2]))

    first = peek()
    if first[0] == "rp":
        raise UnbalancedParens("unmatched ')'", boff(first[2]))
    node()
    if i < len(toks):
        t = toks[i]
        cls = UnbalancedParens if t[0] == "rp" else MalformedPenman
        raise cls(f"trailing {t[1]!r} after graph", boff(t[2]))

    resolved = []
    for h, r, t in triples:
        if isinstance(t, tuple):
            _, sym, pos = t
            if sym in variables:
                t = variables[sym]
            elif _VARLIKE.match(sym):
                raise DanglingVariable(f"variable {sym!r} is never defined", boff(pos))
            else:
                t = len(labels)
                labels.append(sym)
        resolved.append((h, r, t))
    return MultiRelGraph(tuple(labels), tuple(resolved))


_BARE = re.compile(r'^[^\s()/:"]+$')


def to_penman(g: MultiRelGraph, root: int = 0) -> str:
    """Serialise a graph whose nodes are all reachable from ``root``.

    Every node is written as ``(vN / label)``; later visits write ``vN``.
    """
    children = [[] for _ in g.nodes]
    for h, r, t in g.triples:
        if not _BARE.match(r):
            raise ValueError(f"relation {r!r} cannot be written as a PENMAN role")
        children[h].append((r, t))
    seen = set()

    def label(k):
        lab = g.nodes[k]
        if _BARE.match(lab):
            return lab
        return '"' + lab.replace("\\", "\\\\").replace('"', '\\"') + '"'

    def walk(k):
        seen.add(k)
        parts = [f"(v{k} / {label(k)}"]
        for r, t in children[k]:
            parts.append(f" :{r} " + (f"v{t}" if t in seen else walk(t)))
        parts.append(")")
        return "".join(parts)

    out = walk(root)
    if len(seen) != len(g.nodes):
        raise InvalidGraph(f"{len(g.nodes) - len(seen)} node(s) unreachable from the root")
    return out


def read_amr_file(path) -> list:
    """Blank-line separated PENMAN blocks, sentence on a ``# ::snt`` line."""
    text = Path(path).read_text(encoding="utf-8")
    out = []
    for block in re.split(r"\n\s*\n", text):
        lines = block.strip().splitlines()
        if not lines:
            continue
        snt, ident, body = "", "", []
        for ln in lines:
            if ln.lstrip().startswith("#"):
                m = re.search(r"::snt\s+(.*)$", ln)
                if m:
                    snt = m.group(1).strip()
                m = re.search(r"::id\s+(\S+)", ln)
                if m:
                    ident = m.group(1)
            else:
                body.append(ln)
        if not body:
            continue
        out.append(Example(parse_penman("\n".join(body)), snt, (), ident or str(len(out))))
    return out


# -- KG records ---------------------------------------------------------------

class RecordError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class MalformedRecord(RecordError):
    pass


class IndexOutOfRange(RecordError):
    pass


def _record_to_example(rec, lineno: int) -> Example:
    if not isinstance(rec, dict):
        raise MalformedRecord("record is not an object", lineno)
    try:
        nodes, triples, text = rec["nodes"], rec["triples"], rec["text"]
    except KeyError as e:
        raise MalformedRecord(f"missing key {e.args[0]!r}", lineno) from None
    if not isinstance(nodes, list) or not nodes or not all(isinstance(n, str) for n in nodes):
        raise MalformedRecord("'nodes' must be a non-empty list of strings", lineno)
    if not isinstance(text, str):
        raise MalformedRecord("'text' must be a string", lineno)
    if not isinstance(triples, list):
        raise MalformedRecord("'triples' must be a list", lineno)
    clean = []
    for tr in triples:
        if (not isinstance(tr, list) or len(tr) != 3 or not isinstance(tr[1], str)
                or not all(isinstance(x, int) and not isinstance(x, bool) for x in (tr[0], tr[2]))):
            raise MalformedRecord(f"bad triple {tr!r}", lineno)
        h, r, t = tr
        if not (0 <= h < len(nodes) and 0 <= t < len(nodes)):
            raise IndexOutOfRange(f"triple {tr!r} indexes past {len(nodes)} nodes", lineno)
        clean.append((h, r, t))
    ident = rec.get("id", str(lineno))
    return Example(MultiRelGraph(tuple(nodes), tuple(clean)), text, (), str(ident))


def read_kg_records(path, vocab: Vocab | None = None) -> list:
    """One JSON record per line: ``{"nodes": [...], "triples": [[h, r, t], ...], "text": ...}``."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise MalformedRecord(f"invalid JSON ({e.msg})", lineno) from None
            ex = _record_to_example(rec, lineno)
            out.append(ex.encoded(vocab) if vocab is not None else ex)
    return out


def example_record(ex: Example) -> dict:
    rec = {
        "nodes": list(ex.graph.nodes),
        "triples": [[h, r, t] for h, r, t in ex.graph.triples],
        "text": ex.target_text,
    }
    if ex.id:
        rec["id"] = ex.id
    return rec


def write_kg_records(path, examples: Iterable[Example]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ex in examples:
            fh.write(json.dumps(example_record(ex), ensure_ascii=False) + "\n")


# -- batching -----------------------------------------------------------------------

@dataclass
class Batch:
    """Padded arrays for B examples with at most N graph tokens and T target steps.

    The context node of every joint graph sits at index N, after the padding.
    """
    node_ids: np.ndarray      # (B, N) int
    node_mask: np.ndarray     # (B, N) bool
    positions: np.ndarray     # (B, N) int, position inside the owning label
    rgcn_adj: np.ndarray      # (B, R, N, N) mean-normalised in-neighbour weights
    joint_adj: np.ndarray     # (B, R, N+1, N+1) bool, [b, r, dst, src]
    tgt_in: np.ndarray        # (B, T) int, BOS-shifted targets
    tgt_out: np.ndarray       # (B, T) int
    tgt_mask: np.ndarray      # (B, T) float, 1 on real positions
    graphs: list = field(default_factory=list)
    indices: list = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.node_ids.shape[0]


def token_graph_of(graph: MultiRelGraph, vocab: Vocab) -> TokenGraph:
    return tokenize_graph(levi_transform(graph), vocab)


def graph_arrays(graphs: Sequence[TokenGraph], n_max: int | None = None) -> dict:
    """Padded node/adjacency arrays for a list of token graphs."""
    n_max = max(g.num_nodes for g in graphs) if n_max is None else n_max
    b, r = len(graphs), len(RELATIONS)
    node_ids = np.full((b, n_max), PAD, dtype=np.int64)
    node_mask = np.zeros((b, n_max), dtype=bool)
    positions = np.zeros((b, n_max), dtype=np.int64)
    rgcn = np.zeros((b, r, n_max, n_max))
    joint = np.zeros((b, r, n_max + 1, n_max + 1), dtype=bool)
    for k, g in enumerate(graphs):
        n = g.num_nodes
        node_ids[k, :n] = g.tokens
        node_mask[k, :n] = True
        for lo, hi in g.spans():
            positions[k, lo:hi] = np.arange(hi - lo)
        rgcn[k] = mean_aggregation(relation_adjacency(n, g.edges, n_max))
        jg = build_joint_graph(g)
        # relocate the context node from index n to the shared slot n_max
        remap = np.arange(n + 1)
        remap[n] = n_max
        for src, dst, rel in jg.edges:
            joint[k, RELATIONS.index(rel), remap[dst], remap[src]] = True
    return dict(node_ids=node_ids, node_mask=node_mask, positions=positions, rgcn_adj=rgcn, joint_adj=joint)


def collate(examples: Sequence[Example], vocab: Vocab, indices: Sequence[int] | None = None,
            graphs: Sequence[TokenGraph] | None = None) -> Batch:
    graphs = [token_graph_of(ex.graph, vocab) for ex in examples] if graphs is None else list(graphs)
    arrays = graph_arrays(graphs)
    b = len(examples)
    targets = [ex.target_ids if ex.target_ids else tuple(vocab.encode(ex.target_text)) + (EOS,)
               for ex in examples]
    t_max = max(len(t) for t in targets)
    tgt_out = np.full((b, t_max), PAD, dtype=np.int64)
    tgt_in = np.full((b, t_max), PAD, dtype=np.int64)
    mask = np.zeros((b, t_max))
    for k, t in enumerate(targets):
        tgt_out[k, :len(t)] = t
        tgt_in[k, 0] = BOS
        tgt_in[k, 1:len(t)] = t[:-1]
        mask[k, :len(t)] = 1.0
    return Batch(tgt_in=tgt_in, tgt_out=tgt_out, tgt_mask=mask, graphs=graphs,
                 indices=list(range(b)) if indices is None else list(indices), **arrays)


def make_batches(examples: Sequence[Example], batch_size: int, vocab: Vocab,
                 shuffle_seed: int | None = None, graphs: Sequence[TokenGraph] | None = None) -> list:
    """Split into padded batches; a fixed ``shuffle_seed`` gives a fixed order."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(len(examples))
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(examples))
    out = []
    for lo in range(0, len(order), batch_size):
        idx = [int(i) for i in order[lo:lo + batch_size]]
        gs = None if graphs is None else [graphs[i] for i in idx]
        out.append(collate([examples[i] for i in idx], vocab, idx, gs))
    return out
