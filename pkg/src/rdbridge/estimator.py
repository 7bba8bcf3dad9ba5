"""scikit-learn style wrapper around the training harness."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import PairedDataset
from .exceptions import ShapeError
from .retrieval import RetrievalReport, top_k


def check_dataset(X, d_model: int | None = None) -> PairedDataset:
    """Validate that ``X`` is a usable :class:`PairedDataset`.

    Raises:
        TypeError: ``X`` is not a PairedDataset.
        ShapeError: feature width differs from ``d_model``.
        ContractError / ShapeError: the dataset's own invariants fail.
    """
    if not isinstance(X, PairedDataset):
        raise TypeError(f"expected a PairedDataset, got {type(X).__name__}")
    X.validate()
    if d_model is not None and X.d_model != d_model:
        raise ShapeError(f"dataset width {X.d_model} does not match the fitted width {d_model}")
    return X


class RDBRetriever(BaseEstimator):
    """Adapter-tuned dual-tower retriever over precomputed token features.

    Constructor arguments mirror :class:`~rdbridge.harness.config.TrainConfig`
    and default to its desk preset. ``fit`` trains on the train part of the
    dataset's seeded split and keeps the validation history.

    Example:
        >>> from rdbridge.harness import generate_synthetic
        >>> ds = generate_synthetic(n_classes=2, pairs_per_class=8, d_model=16)
        >>> est = RDBRetriever(epochs=1, d_common=8, d_bottleneck=4).fit(ds)
        >>> img, txt = est.transform(ds)
        >>> img.shape
        (16, 8)
    """

    def __init__(self, lr=2e-3, lr_decay=0.7, decay_every_epochs=20, batch_size=32, epochs=10, margin=0.2,
                 dropout=0.2, d_common=32, d_bottleneck=8, lambda_init=0.8, ema_decay=0.99, seed=0,
                 loss_mask=(True, True, True), cmaa_enabled=True, insertion_plan="all", n_blocks=2,
                 encoder_seed=1234, pooling="mean", hardest_negative=False):
        self.lr = lr
        self.lr_decay = lr_decay
        self.decay_every_epochs = decay_every_epochs
        self.batch_size = batch_size
        self.epochs = epochs
        self.margin = margin
        self.dropout = dropout
        self.d_common = d_common
        self.d_bottleneck = d_bottleneck
        self.lambda_init = lambda_init
        self.ema_decay = ema_decay
        self.seed = seed
        self.loss_mask = loss_mask
        self.cmaa_enabled = cmaa_enabled
        self.insertion_plan = insertion_plan
        self.n_blocks = n_blocks
        self.encoder_seed = encoder_seed
        self.pooling = pooling
        self.hardest_negative = hardest_negative

    def to_config(self):
        from .harness.config import TrainConfig

        return TrainConfig(preset="desk", **self.get_params())

    def fit(self, X: PairedDataset, y=None) -> RDBRetriever:
        """Train on ``X``; ``y`` is ignored (labels live in the dataset)."""
        from .harness.train import Trainer

        check_dataset(X)
        trainer = Trainer(self.to_config(), X)
        result = trainer.run()
        self.model_ = trainer.model
        self.history_ = result.log
        self.loss_trace_ = list(result.loss_trace)
        self.best_val_mR_ = result.best_mR
        self.d_model_ = X.d_model
        return self

    def transform(self, X: PairedDataset) -> tuple[np.ndarray, np.ndarray]:
        """Common-space ``(image_embeddings, caption_embeddings)`` of ``X``."""
        check_is_fitted(self, "model_")
        check_dataset(X, self.d_model_)
        return self.model_.embed_dataset(X)

    def evaluate(self, X: PairedDataset, topk: int = 5) -> RetrievalReport:
        from .harness.train import evaluate_model

        check_is_fitted(self, "model_")
        check_dataset(X, self.d_model_)
        return evaluate_model(self.model_, X, topk=topk)

    def score(self, X: PairedDataset, y=None) -> float:
        """Mean recall over both directions on all of ``X``."""
        return self.evaluate(X).mR

    def predict(self, X: PairedDataset, k: int = 5) -> np.ndarray:
        """Top-``k`` caption positions for every image, best first."""
        imgs, txts = self.transform(X)
        return top_k(imgs @ txts.T, min(k, X.n_captions))
