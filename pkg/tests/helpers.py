"""Small models and batches shared by the model-level tests."""
import numpy as np

from sacagen.config import ModelConfig
from sacagen.graph import MultiRelGraph
from sacagen.ingest import Example, build_vocab, collate, corpus_of
from sacagen.model import GraphToText

SMALL = dict(model_dim=8, heads=2, ffn_dim=16, adapter_dim=6, saca_dim=8, gate_dim=5,
             enc_layers=2, dec_layers=2, max_positions=32)

TOY = [
    Example(MultiRelGraph(("city", "river", "old town", "bridge", "mayor"),
                          ((0, "has", 1), (0, "has", 2), (3, "crosses", 1), (4, "leads", 0))),
            "old bridge crosses river", id="a"),
    Example(MultiRelGraph(("paris", "france"), ((0, "capital of", 1),)), "paris is the capital of france", id="b"),
    Example(MultiRelGraph(("mayor",), ()), "a mayor", id="c"),
]


def toy_vocab(examples=TOY):
    return build_vocab(corpus_of(examples))


def small_model(vocab, randomise=True, seed=0, **changes):
    cfg = ModelConfig(vocab_size=len(vocab), **{**SMALL, **changes})
    model = GraphToText(cfg)
    if randomise:
        randomise_params(model, seed)
    return model


def randomise_params(model, seed=0, scale=0.3):
    """Move every parameter off its structured initial value (zero read-outs, unit gains)."""
    rng = np.random.default_rng(seed)
    for p in model.parameters():
        p.data = p.data + scale * rng.normal(size=p.shape) / np.sqrt(max(p.shape[0], 1))
    return model


def toy_batch(vocab, examples=TOY):
    return collate(examples, vocab)


def copy_shared(src, dst):
    """Copy every parameter whose name exists in both models."""
    theirs = dict(dst.named_parameters())
    for name, p in src.named_parameters():
        if name in theirs:
            theirs[name].data = p.data.copy()
