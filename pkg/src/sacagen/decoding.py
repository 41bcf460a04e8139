"""Greedy and beam-search generation.

The search routines work on any ``step_fn(prefixes) -> (logp, gates)`` where
``prefixes`` is an int array (K, t) starting with BOS, ``logp`` is (K, V) and
``gates`` is (K, N) or None, so they can be driven by the model or by a toy
distribution in tests.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .ingest import BOS, EOS, PAD, Vocab, collate, Example
from .graph import MultiRelGraph


@dataclass
class Hypothesis:
    tokens: tuple                 # generated ids, EOS included when finished
    logprob: float
    finished: bool
    gates: tuple = ()             # one (N,) array per generated token

    def score(self, length_penalty: float = 1.0) -> float:
        n = max(len(self.tokens), 1)
        return self.logprob / (n ** length_penalty)


@dataclass
class Generation:
    ids: list                     # without BOS/EOS
    score: float
    logprob: float
    truncated: bool
    gates: list = field(default_factory=list)
    text: str = ""


def _finish(h: Hypothesis, length_penalty: float) -> Generation:
    ids = [t for t in h.tokens if t != EOS]
    return Generation(ids, h.score(length_penalty), h.logprob, not h.finished, list(h.gates))


def greedy_search(step_fn: Callable, max_len: int, min_len: int = 0, length_penalty: float = 1.0) -> Generation:
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    prefix = [BOS]
    logprob, gates = 0.0, []
    finished = False
    for t in range(max_len):
        logp, g = step_fn(np.array([prefix], dtype=np.int64))
        row = logp[0].copy()
        if t < min_len:
            row[EOS] = -np.inf
        tok = int(np.argmax(row))  # first maximum = lowest id on ties
        logprob += float(row[tok])
        prefix.append(tok)
        if g is not None:
            gates.append(g[0])
        if tok == EOS:
            finished = True
            break
    return _finish(Hypothesis(tuple(prefix[1:]), logprob, finished, tuple(gates)), length_penalty)


def beam_search(step_fn: Callable, beam: int, max_len: int, min_len: int = 0,
                length_penalty: float = 1.0) -> Generation:
    """Beam search over cumulative log-probability.

    Candidates are ranked by (logprob desc, token id asc, parent rank asc).
    An EOS candidate ranked inside the top ``beam`` retires to the finished
    pool; the remaining live slots are filled from the next non-EOS
    candidates.  The greedy path is always carried along (and scored at the
    end), so the result never scores below greedy decoding and ``beam=1`` is
    greedy decoding.  Finished hypotheses compete by
    ``logprob / length ** length_penalty``.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    if beam < 1:
        raise ValueError("beam must be >= 1")
    live = [Hypothesis((), 0.0, False)]
    greedy = 0  # index of the greedy path in ``live``; None once it finished
    done: list = []
    for t in range(max_len):
        prefixes = np.array([(BOS,) + h.tokens for h in live], dtype=np.int64)
        logp, gates = step_fn(prefixes)
        logp = np.array(logp, dtype=np.float64)
        if t < min_len:
            logp[:, EOS] = -np.inf
        v = logp.shape[1]
        flat = (np.array([h.logprob for h in live])[:, None] + logp).reshape(-1)
        parent = np.repeat(np.arange(len(live)), v)
        token = np.tile(np.arange(v), len(live))
        order = np.lexsort((parent, token, -flat))
        forced = None if greedy is None else greedy * v + int(np.argmax(logp[greedy]))

        def extend(c):
            p, tok = divmod(int(c), v)
            h = live[p]
            g = h.gates + ((gates[p],) if gates is not None else ())
            return Hypothesis(h.tokens + (tok,), float(flat[c]), tok == EOS, g)

        new_live, new_greedy = [], None
        slots = beam - (0 if forced is None or forced % v == EOS else 1)
        for rank, c in enumerate(order[:2 * beam]):
            if not np.isfinite(flat[c]):
                break
            if c == forced:
                continue
            if c % v == EOS:
                if rank < beam:
                    done.append(extend(c))
            elif len(new_live) < slots:
                new_live.append(extend(c))
        if forced is not None:
            h = extend(forced)
            if h.finished:
                done.append(h)
            else:
                new_greedy = len(new_live)
                new_live.append(h)
        live, greedy = new_live, new_greedy
        if not live or (len(done) >= beam and greedy is None):
            break
    # unfinished survivors (truncated at max_len) compete too; finished ones win ties
    pool = done + live
    best = min(pool, key=lambda h: (-h.score(length_penalty), not h.finished, len(h.tokens), h.tokens))
    return _finish(best, length_penalty)


def model_step_fn(model, enc, gate_override=None) -> Callable:
    cache: dict = {}

    def step(prefixes):
        k = prefixes.shape[0]
        if k not in cache:
            cache[k] = enc.repeat(k) if k != enc.memory.shape[0] else enc
        return model.step(cache[k], prefixes, gate_override)

    return step


def graph_batch(graphs, vocab: Vocab):
    return collate([Example(g, "") for g in graphs], vocab)


def generate(model, graph: MultiRelGraph, vocab: Vocab, mode: str = "beam", beam: int = 5,
             max_len: int = 128, min_len: int = 0, length_penalty: float = 1.0) -> Generation:
    """Decode one graph; ``mode`` is "greedy" or "beam"."""
    enc = model.encode(graph_batch([graph], vocab))
    step = model_step_fn(model, enc)
    if mode == "greedy":
        out = greedy_search(step, max_len, min_len, length_penalty)
    elif mode == "beam":
        out = beam_search(step, beam, max_len, min_len, length_penalty)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    out.text = vocab.decode(out.ids)
    return out


def greedy_batch(model, graphs, vocab: Vocab, max_len: int = 128, batch_size: int = 32) -> list:
    """Greedy decoding of many graphs at once; returns decoded texts."""
    texts = []
    for lo in range(0, len(graphs), batch_size):
        chunk = graphs[lo:lo + batch_size]
        enc = model.encode(graph_batch(chunk, vocab))
        k = len(chunk)
        prefix = np.full((k, 1), BOS, dtype=np.int64)
        alive = np.ones(k, dtype=bool)
        for _ in range(max_len):
            logp, _ = model.step(enc, prefix)
            tok = np.where(alive, logp.argmax(axis=-1), PAD)
            prefix = np.concatenate([prefix, tok[:, None]], axis=1)
            alive &= tok != EOS
            if not alive.any():
                break
        texts.extend(vocab.decode(row[1:]) for row in prefix)
    return texts


def write_outputs(path, ids, generations, gate_path=None) -> None:
    """Line-delimited ``{"id", "text", "score"}``; optional gate-trace sidecar."""
    with open(path, "w", encoding="utf-8") as fh:
        for ident, g in zip(ids, generations):
            fh.write(json.dumps({"id": ident, "text": g.text, "score": g.score}, ensure_ascii=False) + "\n")
    if gate_path is not None:
        with open(gate_path, "w", encoding="utf-8") as fh:
            for ident, g in zip(ids, generations):
                for step, gates in enumerate(g.gates):
                    pairs = [[i, float(v)] for i, v in enumerate(gates)]
                    fh.write(json.dumps({"id": ident, "step": step, "gates": pairs}) + "\n")
