"""Surface metrics and graph-property bucketed reports.

Texts are lowercased and split on whitespace before scoring.  Scores other
than distinct-n are on a 0-100 scale.
"""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

from .graph import graph_stats


class LengthMismatch(ValueError):
    pass


def _words(text: str) -> list:
    return text.lower().split()


def ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _check(hyps, refs):
    if len(hyps) != len(refs):
        raise LengthMismatch(f"{len(hyps)} hypotheses vs {len(refs)} references")
    if not refs:
        raise ValueError("no references")


def bleu_stats(hyps: Sequence[str], refs: Sequence[str], max_n: int = 4) -> dict:
    match = [0] * max_n
    total = [0] * max_n
    hyp_len = ref_len = 0
    for h, r in zip(hyps, refs):
        ht, rt = _words(h), _words(r)
        hyp_len += len(ht)
        ref_len += len(rt)
        for n in range(1, max_n + 1):
            hc, rc = ngrams(ht, n), ngrams(rt, n)
            match[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            total[n - 1] += max(len(ht) - n + 1, 0)
    return dict(match=match, total=total, hyp_len=hyp_len, ref_len=ref_len)


def bleu(hyps: Sequence[str], refs: Sequence[str], max_n: int = 4, smoothing: str = "none",
         epsilon: float = 0.1) -> float:
    """Corpus BLEU with brevity penalty, one reference per hypothesis.

    Orders with no hypothesis n-grams at all (every hypothesis shorter than n)
    are left out of the geometric mean.  ``smoothing="epsilon"`` replaces a
    zero match count by ``epsilon``; with ``"none"`` any zero precision makes
    the score 0.
    """
    _check(hyps, refs)
    st = bleu_stats(hyps, refs, max_n)
    if st["hyp_len"] == 0:
        return 0.0
    logs = []
    for m, t in zip(st["match"], st["total"]):
        if t == 0:
            continue
        if m == 0:
            if smoothing == "none":
                return 0.0
            if smoothing != "epsilon":
                raise ValueError(f"unknown smoothing {smoothing!r}")
            m = epsilon
        logs.append(math.log(m / t))
    c, r = st["hyp_len"], st["ref_len"]
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return 100.0 * bp * math.exp(sum(logs) / len(logs))


def _char_ngrams(text: str, n: int) -> Counter:
    s = "".join(text.split())
    return Counter(s[i:i + n] for i in range(len(s) - n + 1))


def chrf_pp(hyps: Sequence[str], refs: Sequence[str], char_order: int = 6, word_order: int = 2,
            beta: float = 2.0) -> float:
    """chrF++: character 1..6-grams (whitespace removed) plus word 1..2-grams.

    Match, hypothesis and reference counts are summed over the corpus per
    order; precision and recall are averaged over the orders that have both
    hypothesis and reference n-grams, then combined into an F-beta score.
    """
    _check(hyps, refs)
    stats = []
    for n in range(1, char_order + 1):
        stats.append([0, 0, 0])
        for h, r in zip(hyps, refs):
            hc, rc = _char_ngrams(h.lower(), n), _char_ngrams(r.lower(), n)
            stats[-1][0] += sum((hc & rc).values())
            stats[-1][1] += sum(hc.values())
            stats[-1][2] += sum(rc.values())
    for n in range(1, word_order + 1):
        stats.append([0, 0, 0])
        for h, r in zip(hyps, refs):
            hc, rc = ngrams(_words(h), n), ngrams(_words(r), n)
            stats[-1][0] += sum((hc & rc).values())
            stats[-1][1] += sum(hc.values())
            stats[-1][2] += sum(rc.values())
    precs, recs = [], []
    for m, nh, nr in stats:
        if nh == 0 or nr == 0:
            continue
        precs.append(m / nh)
        recs.append(m / nr)
    if not precs:
        return 0.0
    p, r = sum(precs) / len(precs), sum(recs) / len(recs)
    if p == 0 and r == 0:
        return 0.0
    b2 = beta * beta
    return 100.0 * (1 + b2) * p * r / (b2 * p + r)


def lcs_length(a: Sequence, b: Sequence) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(hyps: Sequence[str], refs: Sequence[str]) -> float:
    """Mean sentence-level LCS F1."""
    _check(hyps, refs)
    total = 0.0
    for h, r in zip(hyps, refs):
        ht, rt = _words(h), _words(r)
        lcs = lcs_length(ht, rt)
        if lcs == 0:
            continue
        p, rec = lcs / len(ht), lcs / len(rt)
        total += 2 * p * rec / (p + rec)
    return 100.0 * total / len(hyps)


def distinct_n(hyps: Sequence[str], n: int) -> float:
    """Unique n-grams over total n-grams across the corpus (0 when there are none)."""
    grams = Counter()
    for h in hyps:
        grams.update(ngrams(_words(h), n))
    total = sum(grams.values())
    return len(grams) / total if total else 0.0


# -- bucketed evaluation ------------------------------------------------------------

# Bucket upper bounds (inclusive) used for AMR and KG graphs; the last bucket is open.
AMR_BUCKETS = {"size": (30, 60), "diameter": (8, 12), "reentrancies": (1, 2)}
KG_BUCKETS = {"size": (20, 40), "diameter": (3, 5), "reentrancies": (5, 10)}


@dataclass
class Bucket:
    label: str
    low: float
    high: float
    count: int
    score: float


def _bucket_labels(boundaries: Sequence[int]) -> list:
    out, lo = [], None
    for b in boundaries:
        if lo is None:
            label = f"<={b}"
        else:
            label = str(b) if lo + 1 == b else f"{lo + 1}-{b}"
        out.append((label, lo, b))
        lo = b
    out.append(("all" if lo is None else f">{lo}", lo, None))
    return out


def bucket_report(examples, hyps: Sequence[str], prop: str, boundaries: Sequence[int],
                  score_fn: Callable = bleu) -> list:
    """Corpus score per bucket of a graph property (size, diameter, reentrancies).

    ``boundaries`` are strictly increasing inclusive upper bounds; values above
    the last bound land in an open-ended bucket.  Empty buckets are omitted.
    """
    if prop not in ("size", "diameter", "reentrancies"):
        raise ValueError(f"unknown graph property {prop!r}")
    if any(b >= c for b, c in zip(boundaries, boundaries[1:])):
        raise ValueError("bucket boundaries must be strictly increasing")
    if len(examples) != len(hyps):
        raise LengthMismatch(f"{len(hyps)} hypotheses vs {len(examples)} examples")
    labels = _bucket_labels(boundaries)
    members = [[] for _ in labels]
    for k, ex in enumerate(examples):
        value = getattr(graph_stats(ex.graph), prop)
        slot = next((i for i, b in enumerate(boundaries) if value <= b), len(boundaries))
        members[slot].append(k)
    out = []
    for (label, lo, hi), idx in zip(labels, members):
        if not idx:
            continue
        score = score_fn([hyps[i] for i in idx], [examples[i].target_text for i in idx])
        out.append(Bucket(label, float("-inf") if lo is None else lo + 1,
                          float("inf") if hi is None else hi, len(idx), score))
    return out


def format_report(rows: dict, buckets: dict | None = None) -> str:
    lines = [f"{'metric':<14}{'score':>10}"]
    lines += [f"{k:<14}{v:>10.2f}" for k, v in rows.items()]
    for prop, bs in (buckets or {}).items():
        lines.append("")
        lines.append(f"{prop:<14}{'count':>8}{'BLEU':>10}")
        lines += [f"{b.label:<14}{b.count:>8}{b.score:>10.2f}" for b in bs]
    return "\n".join(lines) + "\n"


def report_records(rows: dict, buckets: dict | None = None) -> str:
    recs = [json.dumps({"metric": k, "score": v}) for k, v in rows.items()]
    for prop, bs in (buckets or {}).items():
        for b in bs:
            d = asdict(b)
            d["low"] = None if math.isinf(d["low"]) else d["low"]
            d["high"] = None if math.isinf(d["high"]) else d["high"]
            recs.append(json.dumps({"property": prop, **d}))
    return "\n".join(recs) + "\n"


def corpus_scores(hyps: Sequence[str], refs: Sequence[str]) -> dict:
    """Every surface metric on one corpus, keyed by name."""
    return {
        "bleu": bleu(hyps, refs),
        "chrf++": chrf_pp(hyps, refs),
        "rouge-l": rouge_l(hyps, refs),
        "distinct-1": distinct_n(hyps, 1),
        "distinct-2": distinct_n(hyps, 2),
    }
