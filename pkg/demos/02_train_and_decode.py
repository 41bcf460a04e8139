"""Train a small model to memorise synthetic graph descriptions, then decode with beam search.

Run: python demos/02_train_and_decode.py   (about a minute on one core)
"""
import numpy as np

from sacagen import GraphToText, ModelConfig, TrainConfig, bleu, build_vocab, generate, train
from sacagen import numerics as nm
from sacagen.ingest import corpus_of
from sacagen.synthetic import memorisation_set

data = memorisation_set(20)
vocab = build_vocab(corpus_of(data))
print(f"{len(data)} graphs, vocab {len(vocab)}; e.g. {data[0].graph.triples} -> {data[0].target_text!r}")

cfg = ModelConfig(vocab_size=len(vocab), model_dim=32, heads=4, ffn_dim=64, adapter_dim=32, saca_dim=32, gate_dim=32)
tcfg = TrainConfig(lr=3e-3, batch_size=4, max_steps=600, eval_every=200, max_len=16, lam=1e-3)

nm.set_default_dtype(np.float32)
model = GraphToText(cfg).astype(np.float32)
res = train(model, tcfg, data, vocab, dev_set=data)
for h in res.history:
    if h["dev_bleu"] is not None:
        print(f"step {h['step']:4d}  loss {h['total']:.3f}  mean gate {h['mean_gate']:.2f}  BLEU {h['dev_bleu']:.1f}")
model.load_state_dict(res.best_state)

gens = [generate(model, ex.graph, vocab, "beam", beam=5, max_len=16) for ex in data]
print(f"\nbeam-5 train BLEU {bleu([g.text for g in gens], [ex.target_text for ex in data]):.1f}")

# the gates show which graph tokens the decoder still looks at while writing each word
ex, gen = data[0], gens[0]
words = vocab.decode(gen.ids).split()
tokens = [vocab.decode([t], strip_special=False) for t in vocab.encode(" ".join(ex.graph.nodes))]
print(f"\n{ex.target_text!r} -> {gen.text!r}")
print("gate per graph token (entity tokens only, rows = generated words)")
print(" " * 10 + "".join(f"{t:>7}" for t in tokens[:len(ex.graph.nodes)]))
for w, gates in zip(words, gen.gates):
    print(f"{w:>10}" + "".join(f"{v:7.2f}" for v in gates[:len(ex.graph.nodes)]))
