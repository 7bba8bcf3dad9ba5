"""Training loop, evaluation and embedding export."""
from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..cmaa import ForwardContext
from ..data import PairedDataset
from ..dtcl import ema_update
from ..exceptions import ContractError, NonFiniteError, ShapeError
from ..model import Batch, RDBModel
from ..numerics import AdamState, adam_step, first_nonfinite_op, set_default_dtype
from ..retrieval import RetrievalReport, evaluate_similarity, kfold_splits
from .config import TrainConfig

log = logging.getLogger(__name__)


class NonFiniteLossError(FloatingPointError):
    pass


def split_indices(config: TrainConfig, n_images: int) -> dict[str, np.ndarray]:
    """Image positions of the train/val/test parts for ``config.fold``."""
    train, val, test = kfold_splits(n_images, config.k_folds, config.seed)[config.fold]
    return {"train": train, "val": val, "test": test, "all": np.arange(n_images)}


def select_split(ds: PairedDataset, config: TrainConfig, split: str) -> PairedDataset:
    parts = split_indices(config, ds.n_images)
    if split not in parts:
        raise ValueError(f"split must be one of {', '.join(parts)}")
    return ds.subset(parts[split])


def evaluate_model(model: RDBModel, ds: PairedDataset, topk: int = 5) -> RetrievalReport:
    """Embed everything in ``ds`` and score both retrieval directions."""
    if ds.d_model != model.d_model:
        raise ShapeError(f"dataset width {ds.d_model} does not match model width {model.d_model}")
    if ds.n_images == 0:
        raise ContractError("cannot evaluate an empty dataset")
    imgs, txts = model.embed_dataset(ds)
    sim = imgs @ txts.T
    return evaluate_similarity(sim, ds.caption_image_positions(), ds.image_ids, ds.caption_ids, topk=topk)


@dataclass
class EpochLog:
    epoch: int
    lr: float
    losses: dict
    val_mR: float | None
    sigma: list

    def to_dict(self) -> dict:
        return {"epoch": self.epoch, "lr": self.lr, "losses": self.losses, "val_mR": self.val_mR, "sigma": self.sigma}


@dataclass
class TrainResult:
    last: "Trainer"
    best_state: dict | None
    best_mR: float
    log: list = field(default_factory=list)

    @property
    def loss_trace(self) -> list[float]:
        return self.last.step_losses


class Trainer:
    """Stateful training run; every step is reproducible from its state.

    The state (parameters, teacher, Adam moments, RNG, epoch order and cursor)
    round-trips through :mod:`rdbridge.harness.checkpoint`.
    """

    def __init__(self, config: TrainConfig, dataset: PairedDataset):
        dataset.validate()
        if config.dtype == "float32":
            set_default_dtype(np.float32)
        self.config = config
        self.dataset = dataset
        self.splits = split_indices(config, dataset.n_images)
        self.train_ds = dataset.subset(self.splits["train"])
        self.val_ds = dataset.subset(self.splits["val"])
        self.model = RDBModel.build(config, dataset.d_model, dataset.n_classes)
        self.params = self.model.trainable()
        self.optimizer = AdamState(lr=config.lr_at_epoch(0))
        self.optimizer.init_moments([p.shape for p in self.params.values()])
        self.rng = np.random.default_rng((config.seed, 7919, config.fold))
        self.epoch = 0
        self.cursor = 0
        self.order: np.ndarray | None = None
        self.step_losses: list[float] = []
        self.epoch_sums: dict[str, float] = {}
        self.epoch_steps = 0
        self.history: list[EpochLog] = []
        self.best_mR = -math.inf
        self.best_state: dict | None = None

    # -- batching ---------------------------------------------------------------
    def _start_epoch(self) -> None:
        self.order = self.rng.permutation(self.train_ds.n_captions)
        self.cursor = 0
        self.epoch_sums = {}
        self.epoch_steps = 0
        self.optimizer.lr = self.config.lr_at_epoch(self.epoch)

    def _next_batch(self) -> np.ndarray | None:
        bs = self.config.batch_size
        idx = self.order[self.cursor:self.cursor + bs]
        self.cursor += bs
        return idx if len(idx) >= 2 else None

    @property
    def done(self) -> bool:
        return self.epoch >= self.config.epochs

    # -- one optimisation step -------------------------------------------------
    def step(self) -> dict | None:
        """Run one batch; finishes the epoch (validation, logging) when it runs out."""
        if self.done:
            return None
        if self.order is None:
            self._start_epoch()
        idx = self._next_batch()
        out = None
        if idx is not None:
            out = self._optimise(idx)
        if self.cursor >= len(self.order):
            self._finish_epoch()
        return out

    def _optimise(self, idx: np.ndarray) -> dict:
        batch = Batch.from_pairs(self.train_ds, idx, dtype=self.model.image_head.W.dtype)
        ctx = ForwardContext(training=True, dropout=self.config.dropout, rng=self.rng)
        for p in self.params.values():
            p.zero_grad()
        try:
            terms = self.model.losses(batch, ctx)
        except NonFiniteError as exc:
            raise NonFiniteLossError(f"non-finite loss at epoch {self.epoch}; first non-finite op: "
                                     f"{getattr(exc, 'origin', None)} (raised by {exc})") from exc
        value = terms.total.item()
        if not math.isfinite(value):
            op = first_nonfinite_op(terms.total)
            raise NonFiniteLossError(f"non-finite loss at epoch {self.epoch}; first non-finite op: {op}")
        terms.total.backward()
        params = list(self.params.values())
        adam_step([p.data for p in params], [p.grad for p in params], self.optimizer)
        ema_update(self.model.teacher, self.model.text_side(), self.config.ema_decay)
        floats = terms.as_floats()
        self.step_losses.append(value)
        for k, v in floats.items():
            self.epoch_sums[k] = self.epoch_sums.get(k, 0.0) + v
        self.epoch_steps += 1
        return floats

    def _finish_epoch(self) -> None:
        val_mR = evaluate_model(self.model, self.val_ds).mR if self.val_ds.n_images else None
        means = {k: v / max(self.epoch_steps, 1) for k, v in self.epoch_sums.items()}
        entry = EpochLog(self.epoch, self.optimizer.lr, means, val_mR, [float(s.data) for s in self.model.sigma])
        self.history.append(entry)
        log.info("epoch %d lr %.3g losses %s val mR %s", self.epoch, entry.lr, means, val_mR)
        if val_mR is not None and val_mR > self.best_mR:
            from .checkpoint import trainer_state

            self.best_mR = val_mR
            self.best_state = copy.deepcopy(trainer_state(self))
        self.epoch += 1
        self.order = None

    def run(self) -> TrainResult:
        while not self.done:
            self.step()
        return TrainResult(self, self.best_state, self.best_mR, [h.to_dict() for h in self.history])


def train(config: TrainConfig, dataset: PairedDataset) -> TrainResult:
    """Train from scratch for ``config.epochs`` epochs."""
    return Trainer(config, dataset).run()


def cross_validate(config: TrainConfig, dataset: PairedDataset) -> dict:
    """Train every fold (derived seeds) and average the test-split mR."""
    import dataclasses

    scores = []
    for fold in range(config.k_folds):
        cfg = dataclasses.replace(config, fold=fold)
        result = train(cfg, dataset)
        test = select_split(dataset, cfg, "test")
        scores.append(evaluate_model(result.last.model, test).mR)
    return {"fold_mR": scores, "mean_mR": float(np.mean(scores))}


def dump_embeddings(model: RDBModel, ds: PairedDataset, path) -> int:
    """Write ``<id> <modality> <label> <floats>`` lines after a ``#`` header.

    Returns the number of embedding lines written.
    """
    d = model.image_head.W.shape[1]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# RDBEMB v1 d_common={d} columns: id modality label values\n")
        if ds.n_images == 0:
            return 0
        imgs, txts = model.embed_dataset(ds)
        for i, lab, v in zip(ds.image_ids, ds.labels, imgs):
            fh.write(f"{int(i)} image {int(lab)} " + " ".join(map(repr, v.tolist())) + "\n")
        for c, lab, v in zip(ds.caption_ids, ds.caption_labels(), txts):
            fh.write(f"{int(c)} text {int(lab)} " + " ".join(map(repr, v.tolist())) + "\n")
    return ds.n_images + ds.n_captions


def read_embeddings(path) -> list[tuple[int, str, int, np.ndarray]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            parts = line.split()
            rows.append((int(parts[0]), parts[1], int(parts[2]), np.array([float(x) for x in parts[3:]])))
    return rows
