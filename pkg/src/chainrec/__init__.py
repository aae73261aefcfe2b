"""Matrix factorization regularized by confidence-decayed rating smoothness on user and item graphs."""

__version__ = "0.1.0"

from .affinity import AffinityGraph, PairwiseGraph, build_affinity_graph, build_pairwise_graph
from .dataset import RatingDataset, kfold, load_ratings, sample_ratings, sample_users
from .rscgm import FactorModel, Hyperparameters, TrainReport, predict, recommend_top_m, train, train_pairwise
from .smoothness import SmoothnessIndex, build_smoothness_index

__all__ = [
    "AffinityGraph",
    "FactorModel",
    "Hyperparameters",
    "PairwiseGraph",
    "RatingDataset",
    "SmoothnessIndex",
    "TrainReport",
    "build_affinity_graph",
    "build_pairwise_graph",
    "build_smoothness_index",
    "kfold",
    "load_ratings",
    "predict",
    "recommend_top_m",
    "sample_ratings",
    "sample_users",
    "train",
    "train_pairwise",
]
