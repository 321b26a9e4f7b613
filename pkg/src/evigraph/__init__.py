"""Graph-augmented fact verification with evidence-conditioned prompting."""

from .corpus import (LABELS, Claim, Dataset, Document, EvidenceSentence, GenConfig,
                     Vocab, build_vocab, generate_synthetic, load_dataset,
                     sample_few_shot, split_dataset, tokenize)
from .graph import ThreeLayerGraph, build_graph, graph_stats
from .metrics import EvalReport, compute_report
from .trainer import Model, ModelConfig, ablate, evaluate, load_model, save_model, train

__all__ = [
    "LABELS", "Claim", "Dataset", "Document", "EvidenceSentence", "GenConfig",
    "Vocab", "build_vocab", "generate_synthetic", "load_dataset",
    "sample_few_shot", "split_dataset", "tokenize",
    "ThreeLayerGraph", "build_graph", "graph_stats",
    "EvalReport", "compute_report",
    "Model", "ModelConfig", "ablate", "evaluate", "load_model", "save_model", "train",
]
