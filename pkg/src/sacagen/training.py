"""Losses, the training loop, and checkpoint save/load for the full model."""
from __future__ import annotations

import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nm
from .config import ModelConfig, TrainConfig, format_config, parse_config_text
from .decoding import greedy_batch
from .ingest import Vocab, make_batches, token_graph_of
from .metrics import bleu
from .model import GraphToText
from .numerics import Tensor


class NonFiniteLoss(FloatingPointError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value} at step {step}")
        self.step = step


class ConfigMismatch(ValueError):
    pass


def lm_loss(logits: Tensor, targets, pad_mask=None) -> Tensor:
    """Mean token NLL over positions where ``pad_mask`` is 1."""
    return nm.cross_entropy(logits, targets, pad_mask)


def dgp_loss(gates: Tensor, target_len=None, tgt_mask=None, node_mask=None) -> Tensor:
    """sum_t ||gate_t||_1 / |y|.

    ``gates`` is (T, N) for one example, with ``target_len`` = |y|, or
    (B, T, N) with masks (B, T) and (B, N); batch values are averaged.
    """
    if gates.ndim == 2:
        if target_len is None:
            target_len = gates.shape[0]
        return gates.sum() * (1.0 / float(target_len))
    b, t, n = gates.shape
    tm = np.ones((b, t)) if tgt_mask is None else np.asarray(tgt_mask, dtype=float)
    nmask = np.ones((b, n)) if node_mask is None else np.asarray(node_mask, dtype=float)
    lengths = np.maximum(tm.sum(axis=1), 1.0)
    w = tm[:, :, None] * nmask[:, None, :] / (lengths[:, None, None] * b)
    return (gates * Tensor(w.astype(gates.dtype))).sum()


def mean_gate(gates: Tensor | None, tgt_mask, node_mask) -> float:
    if gates is None:
        return float("nan")
    w = np.asarray(tgt_mask, dtype=float)[:, :, None] * np.asarray(node_mask, dtype=float)[:, None, :]
    return float((gates.data * w).sum() / max(w.sum(), 1.0))


@dataclass
class LossReport:
    lm: float
    dgp: float
    total: float
    tokens: int
    mean_gate: float = float("nan")


def compute_loss(model: GraphToText, batch, lam: float, rng=None, gate_override=None):
    """Forward one batch; returns ``(total loss tensor, LossReport)``."""
    out = model(batch, rng, gate_override)
    lm = lm_loss(out.logits, batch.tgt_out, batch.tgt_mask)
    if out.gates is not None and gate_override is None:
        dg = dgp_loss(out.gates, tgt_mask=batch.tgt_mask, node_mask=batch.node_mask)
        total = lm + dg * lam if lam else lm
        dgv = float(dg.data)
    else:
        total, dgv = lm, 0.0
    report = LossReport(float(lm.data), dgv, float(total.data), int(batch.tgt_mask.sum()),
                        mean_gate(out.gates, batch.tgt_mask, batch.node_mask))
    return total, report


# -- checkpoints --------------------------------------------------------------------

def save_model(path, model: GraphToText, vocab: Vocab, step: int, extra: dict | None = None) -> None:
    meta = {"config_hash": model.cfg.hash(), "step": int(step), "config": format_config(model.cfg),
            "vocab": vocab.itos[4:], "lowercase": vocab.lowercase}
    meta.update(extra or {})
    nm.save_checkpoint(path, model.state_dict(), meta)


def load_model(path, cfg: ModelConfig | None = None, dtype=np.float32):
    """Rebuild the model stored at ``path``; with ``cfg`` given its hash must match."""
    arrays, meta = nm.load_checkpoint(path)
    stored, _ = parse_config_text(meta["config"])
    if stored.hash() != meta["config_hash"]:
        raise ConfigMismatch("checkpoint config does not match its recorded hash")
    if cfg is not None and cfg.hash() != meta["config_hash"]:
        raise ConfigMismatch(f"config hash {cfg.hash()} != checkpoint {meta['config_hash']}")
    with nm.default_dtype(dtype):
        model = GraphToText(stored)
    model.load_state_dict(arrays)
    model.astype(dtype)
    vocab = Vocab(meta["vocab"], lowercase=meta.get("lowercase", True))
    return model, vocab, meta


# -- training loop ------------------------------------------------------------------

@dataclass
class TrainResult:
    history: list = field(default_factory=list)
    best_bleu: float = float("-inf")
    best_step: int = -1
    best_state: dict | None = None
    steps: int = 0
    seconds: float = 0.0


def dev_bleu(model: GraphToText, examples, vocab: Vocab, max_len: int, limit: int = 0) -> float:
    exs = examples[:limit] if limit else examples
    was = model.training
    model.eval()
    hyps = greedy_batch(model, [e.graph for e in exs], vocab, max_len)
    model.train(was)
    return bleu(hyps, [e.target_text for e in exs], smoothing="epsilon")


def train(model: GraphToText, cfg: TrainConfig, train_set, vocab: Vocab, dev_set=None,
          out_dir=None, log=None, verbose: bool = False) -> TrainResult:
    """AdamW on L = L_lm + lam * L_DGP with a linearly decaying learning rate.

    Every ``eval_every`` steps (and at the end) greedy dev BLEU is measured on
    ``dev_set`` (defaults to the training set) and the best parameters are
    kept; with ``out_dir`` they are also written to ``best.ckpt``.  ``log`` is
    a path or file receiving one JSON line per step.  Batches are reshuffled
    each epoch with ``seed + epoch``.
    """
    if not train_set:
        raise ValueError("empty training set")
    dev_set = train_set if dev_set is None else dev_set
    if cfg.freeze:
        model.freeze(cfg.freeze)
    params = [p for p in model.parameters()]
    opt = nm.AdamW(params, cfg.lr, weight_decay=cfg.weight_decay)
    sched = nm.LinearSchedule(cfg.lr, cfg.max_steps)
    rng = np.random.default_rng(cfg.seed)
    graphs = [token_graph_of(ex.graph, vocab) for ex in train_set]
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    own_log = isinstance(log, (str, Path))
    fh = open(log, "w", encoding="utf-8") if own_log else log
    res = TrainResult()
    t0 = time.perf_counter()
    step, epoch = 0, 0
    model.train()
    try:
        while step < cfg.max_steps:
            for batch in make_batches(train_set, cfg.batch_size, vocab, cfg.seed + epoch, graphs):
                if step >= cfg.max_steps:
                    break
                opt.zero_grad()
                loss, rep = compute_loss(model, batch, cfg.lam, rng)
                if not np.isfinite(rep.total):
                    raise NonFiniteLoss(step, rep.total)
                nm.backward(loss, params)
                opt.step(sched(step))
                step += 1
                rec = {"step": step, "lm": rep.lm, "dgp": rep.dgp, "total": rep.total,
                       "dev_bleu": None, "mean_gate": None if np.isnan(rep.mean_gate) else rep.mean_gate}
                if step % cfg.eval_every == 0 or step == cfg.max_steps:
                    score = dev_bleu(model, dev_set, vocab, cfg.max_len, cfg.eval_limit)
                    rec["dev_bleu"] = score
                    if score > res.best_bleu:
                        res.best_bleu, res.best_step = score, step
                        res.best_state = {k: v.copy() for k, v in model.state_dict().items()}
                        if out_dir is not None:
                            save_model(out_dir / "best.ckpt", model, vocab, step, {"dev_bleu": score})
                    if verbose:
                        print(f"step {step} lm {rep.lm:.4f} dgp {rep.dgp:.3f} dev_bleu {score:.2f}",
                              file=sys.stderr)
                res.history.append(rec)
                if fh is not None:
                    fh.write(json.dumps(rec) + "\n")
            epoch += 1
    finally:
        if own_log and fh is not None:
            fh.close()
        model.eval()
    res.steps = step
    res.seconds = time.perf_counter() - t0
    if out_dir is not None:
        save_model(out_dir / "last.ckpt", model, vocab, step)
    return res
