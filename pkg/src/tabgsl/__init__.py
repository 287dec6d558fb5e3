"""Graph structure learning and GCN classification for tabular data.

Learns a weighted instance-association graph from a labeled table via
dual-view graph contrastive learning against a classifier-derived teacher
graph, and jointly trains a graph convolutional classifier on it.
"""

__version__ = "0.1.0"

from .contrast import GraphEncoder, GraphViewPair, bootstrap, drop_edges, mask_features, nt_xent
from .data import (
    ColumnSchema,
    DataError,
    SplitIndices,
    Standardizer,
    TabularDataset,
    dense_features,
    load_dataset,
    preprocess,
    stratified_split,
)
from .evaluation import (
    MetricResult,
    f1_scores,
    homophily,
    multi_trial,
    paired_signed_rank,
    primary_metric,
    primary_metric_name,
    sweep,
)
from .export import export_embeddings, export_graph
from .features import FeatureTokenizer, InstanceEmbedder, dataset_tensors, embed_instances
from .gcn import GCNClassifier, gcn_normalize, nll_loss
from .graph import (
    AnchorClassifier,
    GraphLearner,
    WeightedAdjacency,
    build_anchor_adjacency,
    knn_sparsify,
    learn_adjacency,
    pairwise_cosine,
    train_anchor_classifier,
)
from .seeding import derive_seed
from .training import (
    ConfigError,
    TrainConfig,
    TrainedModel,
    TrainingDiverged,
    TrainReport,
    random_search,
    train,
    train_end_to_end,
    train_pretrain_finetune,
    train_two_stage,
)

__all__ = [
    "AnchorClassifier",
    "ColumnSchema",
    "ConfigError",
    "DataError",
    "FeatureTokenizer",
    "GCNClassifier",
    "GraphEncoder",
    "GraphLearner",
    "GraphViewPair",
    "InstanceEmbedder",
    "MetricResult",
    "SplitIndices",
    "Standardizer",
    "TabularDataset",
    "TrainConfig",
    "TrainReport",
    "TrainedModel",
    "TrainingDiverged",
    "WeightedAdjacency",
    "bootstrap",
    "build_anchor_adjacency",
    "dataset_tensors",
    "dense_features",
    "derive_seed",
    "drop_edges",
    "embed_instances",
    "export_embeddings",
    "export_graph",
    "f1_scores",
    "gcn_normalize",
    "homophily",
    "knn_sparsify",
    "learn_adjacency",
    "load_dataset",
    "mask_features",
    "multi_trial",
    "nll_loss",
    "nt_xent",
    "paired_signed_rank",
    "pairwise_cosine",
    "preprocess",
    "primary_metric",
    "primary_metric_name",
    "random_search",
    "stratified_split",
    "sweep",
    "train",
    "train_anchor_classifier",
    "train_end_to_end",
    "train_pretrain_finetune",
    "train_two_stage",
]
