"""Synthetic data, training loop, checkpoints, configuration and CLI."""
from .checkpoint import load_checkpoint, model_from_state, restore_trainer, save_checkpoint, trainer_state
from .config import ABLATIONS, TrainConfig, load_config, parse_config_text
from .synthetic import generate_synthetic
from .train import (NonFiniteLossError, Trainer, TrainResult, cross_validate, dump_embeddings, evaluate_model,
                    read_embeddings, select_split, split_indices, train)

__all__ = [
    "ABLATIONS", "NonFiniteLossError", "TrainConfig", "TrainResult", "Trainer", "cross_validate",
    "dump_embeddings", "evaluate_model", "generate_synthetic", "load_checkpoint", "load_config",
    "model_from_state", "parse_config_text", "read_embeddings", "restore_trainer", "save_checkpoint",
    "select_split", "split_indices", "train", "trainer_state",
]
