"""Graph-to-text generation with structure-aware cross-attention and gated graph pruning."""
from .config import ModelConfig, TrainConfig, load_config
from .graph import MultiRelGraph, levi_transform, tokenize_graph, build_joint_graph, graph_stats
from .ingest import Vocab, Example, build_vocab, parse_penman, read_kg_records, make_batches
from .model import GraphToText, added_parameter_count
from .training import train, lm_loss, dgp_loss, save_model, load_model
from .decoding import generate, greedy_search, beam_search
from .metrics import bleu, chrf_pp, rouge_l, distinct_n, bucket_report

__version__ = "0.1.0"
