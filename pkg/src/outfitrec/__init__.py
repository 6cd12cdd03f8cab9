"""User-outfit-item graph network for outfit recommendation and compatibility.

Users, outfits and items form a three-level graph; item embeddings are refined
over a category co-occurrence graph and aggregated upward into outfit and
user embeddings. Two heads score user-outfit preference and outfit
compatibility, trained jointly with BPR.
"""

from .dataio import (Dataset, SplitSpec, SyntheticSpec, generate_synthetic, kcore_filter,
                     load_dataset, split_dataset, write_dataset)
from .eval import (build_fitb_queries, evaluate_topk, fitb_accuracy, hit_rate, ndcg,
                   recall_precision)
from .graph import (CategoryGraph, EntityIndex, HierarchicalGraph, build_category_graph,
                    build_entity_index, build_outfit_item_graph, validate_graph)
from .kernels import BACKEND
from .model import ModelConfig, ModelParams, OutfitModel, init_params
from .training import Experiment, TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "CategoryGraph", "Dataset", "EntityIndex", "Experiment", "HierarchicalGraph",
    "ModelConfig", "ModelParams", "OutfitModel", "SplitSpec", "SyntheticSpec", "TrainConfig",
    "build_category_graph", "build_entity_index", "build_fitb_queries",
    "build_outfit_item_graph", "evaluate_topk", "fitb_accuracy", "generate_synthetic",
    "hit_rate", "init_params", "kcore_filter", "load_checkpoint", "load_dataset", "ndcg",
    "recall_precision", "save_checkpoint", "split_dataset", "train", "validate_graph",
    "write_dataset",
]
