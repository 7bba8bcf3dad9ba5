"""Checkpoint container.

Layout::

    RDBCKPT v1\\n
    <header byte length>\\n
    <JSON header: {"meta": {...}, "tensors": [{name, dtype, shape, offset, nbytes}, ...]}>
    <raw little-endian tensor bytes, concatenated in header order>

Tensor names are prefixed ``param/``, ``teacher/``, ``adam_m/``, ``adam_v/``;
``order`` holds the current epoch's shuffled batch order when saved mid-epoch.
Frozen tower weights are not stored: they are rebuilt from ``encoder_seed``
and checked against the stored fingerprints.
"""
from __future__ import annotations

import json

import numpy as np

from ..data import PairedDataset
from ..exceptions import ParseError
from ..model import RDBModel
from .config import TrainConfig

MAGIC = b"RDBCKPT v1\n"


def trainer_state(tr) -> dict:
    meta = {
        "format": "RDBCKPT v1",
        "config": tr.config.to_dict(),
        "d_model": tr.dataset.d_model,
        "n_classes": tr.dataset.n_classes,
        "fingerprints": [tr.model.image_encoder.fingerprint(), tr.model.text_encoder.fingerprint()],
        "epoch": tr.epoch,
        "cursor": tr.cursor,
        "step_losses": list(tr.step_losses),
        "epoch_sums": dict(tr.epoch_sums),
        "epoch_steps": tr.epoch_steps,
        "history": [h.to_dict() for h in tr.history],
        "best_mR": tr.best_mR if np.isfinite(tr.best_mR) else None,
        "optimizer": {
            "lr": tr.optimizer.lr, "beta1": tr.optimizer.beta1, "beta2": tr.optimizer.beta2,
            "epsilon": tr.optimizer.epsilon, "step_count": tr.optimizer.step_count,
        },
        "rng": tr.rng.bit_generator.state,
    }
    tensors = {f"param/{k}": t.data for k, t in tr.model.state_tensors().items()}
    tensors.update({f"{k.replace('teacher.', 'teacher/', 1)}": t.data for k, t in tr.model.teacher_tensors().items()})
    for name, m, v in zip(tr.params, tr.optimizer.first_moment, tr.optimizer.second_moment):
        tensors[f"adam_m/{name}"] = m
        tensors[f"adam_v/{name}"] = v
    if tr.order is not None:
        tensors["order"] = tr.order
    return {"meta": meta, "tensors": {k: np.array(v, copy=True) for k, v in tensors.items()}}


def save_checkpoint(state: dict, path) -> None:
    entries, blobs, offset = [], [], 0
    for name, arr in state["tensors"].items():
        arr = np.asarray(arr)
        arr = arr.astype(arr.dtype.newbyteorder("<"), order="C", copy=False)
        raw = arr.tobytes()
        entries.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": state["meta"], "tensors": entries}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(f"{len(header)}\n".encode())
        fh.write(header)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path) -> dict:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(MAGIC):
        raise ParseError(f"{path}: not an RDBCKPT v1 file", 1)
    rest = blob[len(MAGIC):]
    nl = rest.find(b"\n")
    try:
        hlen = int(rest[:nl])
        header = json.loads(rest[nl + 1:nl + 1 + hlen])
    except (ValueError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: corrupt checkpoint header ({exc})", 2) from None
    data = rest[nl + 1 + hlen:]
    tensors = {}
    for e in header["tensors"]:
        dt = np.dtype(e["dtype"])
        chunk = data[e["offset"]:e["offset"] + e["nbytes"]]
        if len(chunk) != e["nbytes"]:
            raise ParseError(f"{path}: truncated tensor {e['name']}")
        tensors[e["name"]] = np.frombuffer(chunk, dtype=dt).reshape(e["shape"]).astype(dt.newbyteorder("="))
    return {"meta": header["meta"], "tensors": tensors}


def _load_into_model(model: RDBModel, state: dict) -> None:
    meta, tensors = state["meta"], state["tensors"]
    fps = [model.image_encoder.fingerprint(), model.text_encoder.fingerprint()]
    if fps != meta["fingerprints"]:
        raise ParseError("checkpoint encoder fingerprints do not match the rebuilt frozen towers")
    for name, t in model.state_tensors().items():
        t.data[...] = tensors[f"param/{name}"]
    for name, t in model.teacher_tensors().items():
        t.data[...] = tensors[name.replace("teacher.", "teacher/", 1)]


def model_from_state(state: dict) -> RDBModel:
    meta = state["meta"]
    config = TrainConfig.from_dict(meta["config"])
    model = RDBModel.build(config, meta["d_model"], meta["n_classes"])
    _load_into_model(model, state)
    return model


def config_from_state(state: dict) -> TrainConfig:
    return TrainConfig.from_dict(state["meta"]["config"])


def restore_trainer(state: dict, dataset: PairedDataset):
    """Rebuild a Trainer positioned exactly where ``state`` was taken."""
    from .train import EpochLog, Trainer

    meta, tensors = state["meta"], state["tensors"]
    if dataset.d_model != meta["d_model"] or dataset.n_classes != meta["n_classes"]:
        raise ParseError("checkpoint dimensions do not match the dataset")
    tr = Trainer(config_from_state(state), dataset)
    _load_into_model(tr.model, state)
    opt = meta["optimizer"]
    tr.optimizer.lr = opt["lr"]
    tr.optimizer.beta1, tr.optimizer.beta2, tr.optimizer.epsilon = opt["beta1"], opt["beta2"], opt["epsilon"]
    tr.optimizer.step_count = opt["step_count"]
    tr.optimizer.first_moment = [tensors[f"adam_m/{n}"].copy() for n in tr.params]
    tr.optimizer.second_moment = [tensors[f"adam_v/{n}"].copy() for n in tr.params]
    tr.rng.bit_generator.state = meta["rng"]
    tr.epoch = meta["epoch"]
    tr.cursor = meta["cursor"]
    tr.order = tensors["order"].copy() if "order" in tensors else None
    tr.step_losses = list(meta["step_losses"])
    tr.epoch_sums = dict(meta["epoch_sums"])
    tr.epoch_steps = meta["epoch_steps"]
    tr.history = [EpochLog(**h) for h in meta["history"]]
    tr.best_mR = meta["best_mR"] if meta["best_mR"] is not None else float("-inf")
    return tr
