"""Self-supervised learning with tree-Wasserstein distances on probability embeddings."""

from .distances import DistanceKind, jeffrey_divergence, pairwise_twd, rtwd, total_variation, twd
from .heads import HeadConfig, arcface_head, dct_key_matrix, pe_key_matrix, sem_head, softmax_head
from .trees import (TreeTopology, build_chain_tree, build_cluster_tree, build_tv_tree,
                    shortest_path_matrix)

__version__ = "0.1.0"

__all__ = [
    "DistanceKind",
    "HeadConfig",
    "TreeTopology",
    "arcface_head",
    "build_chain_tree",
    "build_cluster_tree",
    "build_tv_tree",
    "dct_key_matrix",
    "jeffrey_divergence",
    "pairwise_twd",
    "pe_key_matrix",
    "rtwd",
    "sem_head",
    "shortest_path_matrix",
    "softmax_head",
    "total_variation",
    "twd",
]
