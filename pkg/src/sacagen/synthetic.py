"""Synthetic graph-text sets for smoke runs, memorisation and ablations."""
from __future__ import annotations

import numpy as np

from .graph import MultiRelGraph
from .ingest import Example

ENTITIES = tuple(f"e{i}" for i in range(40))
RELS = ("near", "owns", "likes", "knows", "sees", "holds")


def path_graphs(count: int, nodes: int, seed: int = 0) -> list:
    """``count`` directed paths of ``nodes`` nodes each, with a describing sentence."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(count):
        labels = [ENTITIES[i] for i in rng.choice(len(ENTITIES), nodes, replace=False)]
        rels = [RELS[i] for i in rng.integers(0, len(RELS), nodes - 1)]
        triples = tuple((i, rels[i], i + 1) for i in range(nodes - 1))
        text = " ".join(f"{labels[i]} {rels[i]}" for i in range(nodes - 1)) + f" {labels[-1]}"
        out.append(Example(MultiRelGraph(tuple(labels), triples), text, id=f"path{k}"))
    return out


def memorisation_set(count: int = 50, seed: int = 0) -> list:
    """Small random graphs (3-5 nodes) whose text lists the triples in order."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(count):
        n = int(rng.integers(3, 6))
        labels = [ENTITIES[i] for i in rng.choice(len(ENTITIES), n, replace=False)]
        triples = []
        for t in range(1, n):
            h = int(rng.integers(0, t))
            triples.append((h, RELS[int(rng.integers(0, len(RELS)))], t))
        text = " ".join(f"{labels[h]} {r} {labels[t]}" for h, r, t in triples)
        out.append(Example(MultiRelGraph(tuple(labels), tuple(triples)), text, id=f"mem{k}"))
    return out


def chain_set(count: int, seed: int = 0, length: int = 4, distractors: int = 3, entities: int = 16) -> list:
    """Structure-sensitive set: follow the ``next`` chain from the node marked ``start``.

    Every graph holds a chain of ``length`` entities joined by ``next`` edges,
    starting at a node linked from a ``start`` marker, plus ``distractors``
    entities attached by ``next`` edges that branch off nothing reachable from
    the start.  Node order is shuffled, so the target (the chain in order)
    depends only on the edges, not on how the nodes are listed.
    """
    rng = np.random.default_rng(seed)
    pool = ENTITIES[:entities]
    out = []
    for k in range(count):
        picked = [pool[i] for i in rng.choice(len(pool), length + distractors, replace=False)]
        chain, extra = picked[:length], picked[length:]
        labels = ["start"] + chain + extra
        triples = [(0, "first", 1)]
        triples += [(i, "next", i + 1) for i in range(1, length)]
        # distractors form their own short chain so they look like chain nodes
        base = 1 + length
        triples += [(base + i, "next", base + i + 1) for i in range(distractors - 1)]
        perm = rng.permutation(len(labels))
        inv = np.argsort(perm)  # old index -> new position
        new_labels = tuple(labels[i] for i in perm)
        new_triples = tuple((int(inv[h]), r, int(inv[t])) for h, r, t in triples)
        order = rng.permutation(len(new_triples))
        new_triples = tuple(new_triples[i] for i in order)
        out.append(Example(MultiRelGraph(new_labels, new_triples), " ".join(chain), id=f"chain{k}"))
    return out
