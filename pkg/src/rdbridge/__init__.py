"""Representation discrepancy bridging for cross-modal retrieval.

Frozen stand-in encoders are adapted with paired image/text adapters and
trained with a three-term loss on precomputed token features.
"""
from .data import PairedDataset, load_features, save_features
from .estimator import RDBRetriever, check_dataset
from .exceptions import ConfigError, ContractError, NonFiniteError, ParseError, ShapeError
from .model import RDBModel
from .retrieval import RetrievalReport, evaluate_similarity, mean_recall, recall_at_k, similarity_matrix

__all__ = [
    "ConfigError", "ContractError", "NonFiniteError", "PairedDataset", "ParseError", "RDBModel",
    "RDBRetriever", "RetrievalReport", "ShapeError", "check_dataset", "evaluate_similarity",
    "load_features", "mean_recall", "recall_at_k", "save_features", "similarity_matrix",
]
__version__ = "0.1.0"
