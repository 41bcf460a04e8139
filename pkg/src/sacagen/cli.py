"""Command-line entry point: preprocess, train, generate, evaluate, analyze, gradcheck.

Progress goes to stderr; data goes to stdout or the named files.  Exit codes:
0 success, 1 runtime error, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import numerics as nm
from .config import ModelConfig, format_config, load_config, parse_config_text
from .decoding import generate, write_outputs
from .graph import MultiRelGraph, graph_stats
from .ingest import Example, Vocab, build_vocab, corpus_of, read_amr_file, read_kg_records, write_kg_records
from .metrics import AMR_BUCKETS, KG_BUCKETS, bucket_report, corpus_scores, format_report, report_records


class UsageError(Exception):
    pass


def load_examples(path) -> list:
    """KG records for ``.jsonl``/``.json`` files, PENMAN blocks otherwise."""
    path = Path(path)
    if path.suffix in (".jsonl", ".json"):
        return read_kg_records(path)
    return read_amr_file(path)


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _overrides(pairs) -> dict:
    out = {}
    for p in pairs or ():
        if "=" not in p:
            raise UsageError(f"--set expects key=value, got {p!r}")
        k, v = p.split("=", 1)
        out[k.strip()] = v.strip()
    return out


# -- subcommands ----------------------------------------------------------------------

def cmd_preprocess(args) -> int:
    train = [ex for p in args.train for ex in load_examples(p)]
    dev = [ex for p in (args.dev or ()) for ex in load_examples(p)]
    if not train:
        raise ValueError("no training examples")
    vocab = build_vocab(corpus_of(train), args.min_freq)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_kg_records(out / "train.jsonl", train)
    if dev:
        write_kg_records(out / "dev.jsonl", dev)
    vocab.save(out / "vocab.txt")
    _log(f"{len(train)} train / {len(dev)} dev examples, vocab {len(vocab)} -> {out}")
    return 0


def _dataset(data_dir):
    d = Path(data_dir)
    vocab = Vocab.load(d / "vocab.txt")
    train = read_kg_records(d / "train.jsonl")
    dev = read_kg_records(d / "dev.jsonl") if (d / "dev.jsonl").exists() else []
    return train, dev, vocab


def decode_all(model, examples, vocab, mode, beam, max_len, length_penalty=1.0) -> list:
    return [generate(model, ex.graph, vocab, mode, beam, max_len, 0, length_penalty) for ex in examples]


def cmd_train(args) -> int:
    from .model import GraphToText
    from .training import load_model, train

    mcfg, tcfg = load_config(args.config, _overrides(args.set)) if args.config else parse_config_text("", _overrides(args.set))
    train_set, dev_set, vocab = _dataset(args.data)
    mcfg = mcfg.variant(vocab_size=len(vocab))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(format_config(mcfg, tcfg), encoding="utf-8")
    dtype = np.dtype(tcfg.dtype).type
    with nm.default_dtype(dtype):
        model = GraphToText(mcfg).astype(dtype)
        res = train(model, tcfg, train_set, vocab, dev_set or None, out, out / "metrics.jsonl", verbose=True)
    _log(f"best dev BLEU {res.best_bleu:.2f} at step {res.best_step} ({res.steps} steps, {res.seconds:.1f}s)")
    # final evaluation: beam search from the stored float32 checkpoint
    model, vocab, meta = load_model(out / "best.ckpt")
    eval_set = dev_set or train_set
    with nm.default_dtype(np.float32):
        gens = decode_all(model, eval_set, vocab, "beam", tcfg.beam, tcfg.max_len, tcfg.length_penalty)
    ids = [ex.id for ex in eval_set]
    write_outputs(out / "final.out.jsonl", ids, gens)
    scores = corpus_scores([g.text for g in gens], [ex.target_text for ex in eval_set])
    (out / "final_eval.json").write_text(json.dumps({"step": meta["step"], **scores}, indent=1) + "\n",
                                         encoding="utf-8")
    sys.stdout.write(format_report(scores))
    return 0


def cmd_generate(args) -> int:
    from .training import load_model

    model, vocab, _ = load_model(args.checkpoint)
    examples = load_examples(args.data)
    with nm.default_dtype(np.float32):
        gens = decode_all(model, examples, vocab, args.mode, args.beam, args.max_len, args.length_penalty)
    ids = [ex.id for ex in examples]
    write_outputs(args.out, ids, gens, args.gates)
    trunc = sum(g.truncated for g in gens)
    _log(f"{len(gens)} outputs -> {args.out}" + (f" ({trunc} truncated at max_len)" if trunc else ""))
    return 0


def _read_texts(path) -> tuple:
    """Texts (and examples when available) from an outputs/records file or plain text."""
    path = Path(path)
    if path.suffix in (".jsonl", ".json"):
        with open(path, encoding="utf-8") as fh:
            recs = [json.loads(ln) for ln in fh if ln.strip()]
        if recs and "nodes" in recs[0]:
            exs = read_kg_records(path)
            return [e.target_text for e in exs], exs
        return [r["text"] for r in recs], None
    if path.suffix in (".txt", ".out", ".ref", ".hyp", ""):
        return path.read_text(encoding="utf-8").splitlines(), None
    exs = read_amr_file(path)
    return [e.target_text for e in exs], exs


def cmd_evaluate(args) -> int:
    hyps, _ = _read_texts(args.hyps)
    refs, ref_examples = _read_texts(args.refs)
    scores = corpus_scores(hyps, refs)
    buckets = None
    if args.buckets:
        if ref_examples is None:
            raise UsageError("--buckets needs references with graphs (KG records or AMR)")
        preset = AMR_BUCKETS if args.buckets == "amr" else KG_BUCKETS
        buckets = {prop: bucket_report(ref_examples, hyps, prop, bounds) for prop, bounds in preset.items()}
    text = report_records(scores, buckets) if args.format == "jsonl" else format_report(scores, buckets)
    sys.stdout.write(text)
    return 0


def stats_table(examples) -> str:
    """Distribution summary of graph sizes, triples, diameters and reentrancies."""
    rows = {"#nodes": [], "#triples": [], "diameter": [], "reentrancies": [], "text length": []}
    for ex in examples:
        st = graph_stats(ex.graph)
        rows["#nodes"].append(st.size)
        rows["#triples"].append(len(ex.graph.triples))
        rows["diameter"].append(st.diameter)
        rows["reentrancies"].append(st.reentrancies)
        rows["text length"].append(len(ex.target_text.split()))
    lines = [f"examples {len(examples)}", f"{'':<14}{'avg':>9}{'min':>7}{'median':>8}{'max':>7}"]
    for name, vals in rows.items():
        v = np.asarray(vals, dtype=float)
        lines.append(f"{name:<14}{v.mean():>9.1f}{v.min():>7.0f}{np.median(v):>8.1f}{v.max():>7.0f}")
    return "\n".join(lines) + "\n"


def cmd_analyze(args) -> int:
    examples = [ex for p in args.input for ex in load_examples(p)]
    if not examples:
        raise ValueError("no examples")
    sys.stdout.write(stats_table(examples))
    return 0


def gradcheck_model(mcfg: ModelConfig, coords: int = 100, seed: int = 0):
    """Finite-difference report for the full loss on a 5-node graph with a 4-token target."""
    from .ingest import make_batches
    from .model import GraphToText
    from .training import compute_loss

    g = MultiRelGraph(("city", "river", "old town", "bridge", "mayor"),
                      ((0, "has", 1), (0, "has", 2), (3, "crosses", 1), (4, "leads", 0)))
    ex = Example(g, "old bridge crosses river", id="g")
    vocab = build_vocab(corpus_of([ex]))
    with nm.default_dtype(np.float64):
        model = GraphToText(mcfg.variant(vocab_size=len(vocab)))
        batch = make_batches([ex], 1, vocab)[0]
        params = list(model.parameters())
        return nm.finite_diff_check(lambda: compute_loss(model, batch, 1e-3)[0], params,
                                    coords_per_param=coords, seed=seed, numeric_dtype=np.longdouble)


def cmd_gradcheck(args) -> int:
    base = dict(model_dim=8, heads=2, ffn_dim=16, adapter_dim=8, saca_dim=8, gate_dim=8)
    if args.config:
        mcfg, _ = load_config(args.config, _overrides(args.set))
    else:
        mcfg, _ = parse_config_text("", {**{k: str(v) for k, v in base.items()}, **_overrides(args.set)})
    rep = gradcheck_model(mcfg, args.coords, args.seed)
    for name, err in sorted(rep.per_param.items()):
        print(f"{name:<48}{err:.3e}")
    ok = rep.max_rel_error < args.tol
    print(f"max relative error {rep.max_rel_error:.3e} over {rep.coords_checked} coordinates "
          f"({rep.unresolved} below resolution): {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


# -- parser ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sacagen", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("preprocess", help="raw AMR/KG files -> dataset directory with vocab")
    s.add_argument("--train", nargs="+", required=True)
    s.add_argument("--dev", nargs="*")
    s.add_argument("--out", required=True)
    s.add_argument("--min-freq", type=int, default=1)
    s.set_defaults(fn=cmd_preprocess)

    s = sub.add_parser("train", help="config + dataset -> checkpoints and metric log")
    s.add_argument("--config")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--set", nargs="*", metavar="KEY=VALUE")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("generate", help="checkpoint + inputs -> outputs")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--mode", choices=("greedy", "beam"), default="beam")
    s.add_argument("--beam", type=int, default=5)
    s.add_argument("--max-len", type=int, default=128)
    s.add_argument("--length-penalty", type=float, default=1.0)
    s.add_argument("--gates", help="write per-step gate values to this file")
    s.set_defaults(fn=cmd_generate)

    s = sub.add_parser("evaluate", help="outputs + references -> metric report")
    s.add_argument("--hyps", required=True)
    s.add_argument("--refs", required=True)
    s.add_argument("--buckets", choices=("amr", "kg"))
    s.add_argument("--format", choices=("table", "jsonl"), default="table")
    s.set_defaults(fn=cmd_evaluate)

    s = sub.add_parser("analyze", help="dataset -> graph statistics table")
    s.add_argument("input", nargs="+")
    s.set_defaults(fn=cmd_analyze)

    s = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    s.add_argument("--config")
    s.add_argument("--set", nargs="*", metavar="KEY=VALUE")
    s.add_argument("--coords", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--tol", type=float, default=1e-4)
    s.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except SystemExit as e:  # --help
        return int(e.code or 0)
    try:
        return args.fn(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError, ArithmeticError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
