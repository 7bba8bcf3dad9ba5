"""Dual-task consistency loss.

Three terms (bidirectional hinge over in-batch negatives, per-tower
classification, EMA-teacher consistency) combined by learned uncertainty
weights: ``sum_i L_i / (2 s_i^2) + log(1 + s_i^2)``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import ContractError, ShapeError
from .numerics import Tensor, as_tensor, l2_normalize, log_op, log_softmax, matmul, maximum0, mean, sqrt_op, tsum
from .params import frozen_copy, named_tensors

LOSS_NAMES = ("cross", "cls", "consist")


@dataclass
class DtclState:
    """Learnable loss scales plus the EMA teacher.

    ``sigma`` holds the raw values ``s_i``; only ``s_i**2`` is ever used, so
    the weights stay positive without a constraint. ``teacher`` mirrors the
    trainable text-side parameter tree.
    """

    sigma: list = field(default_factory=lambda: [Tensor(np.array(1.0), requires_grad=True) for _ in range(3)])
    teacher: object = None
    ema_decay: float = 0.999
    margin: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.ema_decay <= 1.0:
            raise ValueError(f"ema_decay must lie in [0, 1], got {self.ema_decay}")


def cosine_sim(I, T, eps: float = 1e-12) -> Tensor:
    """``sum(I*T) / (|I| |T| + eps)`` over the last axis."""
    I, T = as_tensor(I), as_tensor(T)
    if I.shape != T.shape:
        raise ShapeError(f"cosine_sim: {I.shape} vs {T.shape}")
    dot = tsum(I * T, axis=-1)
    norms = sqrt_op(tsum(I * I, axis=-1)) * sqrt_op(tsum(T * T, axis=-1))
    return dot / (norms + eps)


def cosine_matrix(img, txt) -> Tensor:
    """Pairwise cosine, ``[N, d] x [M, d] -> [N, M]``."""
    a = l2_normalize(as_tensor(img), axis=-1)
    b = l2_normalize(as_tensor(txt), axis=-1)
    return matmul(a, b.T)


def cross_modal_loss(img_embs, txt_embs, margin: float = 0.2,
                     groups: np.ndarray | None = None, hardest: bool = False) -> Tensor:
    """Bidirectional hinge loss; pair ``i`` is row ``i`` of both inputs.

    Sums ``[m - cos(I,T) + cos(I,T^)]+`` over negative captions and
    ``[m - cos(I,T) + cos(I^,T)]+`` over negative images, over all pairs.

    Args:
        groups: optional image id per row; rows sharing an id are not used
            as each other's negatives.
        hardest: keep only the hardest negative per anchor and direction.
    """
    img_embs, txt_embs = as_tensor(img_embs), as_tensor(txt_embs)
    if img_embs.shape != txt_embs.shape or img_embs.ndim != 2:
        raise ShapeError(f"cross_modal_loss: {img_embs.shape} vs {txt_embs.shape}")
    B = img_embs.shape[0]
    if B < 2:
        warnings.warn("cross_modal_loss: batch of one has no negatives; returning 0", RuntimeWarning, stacklevel=2)
        return tsum(img_embs * 0.0)
    return hinge_from_similarity(cosine_matrix(img_embs, txt_embs), margin, groups, hardest)


def hinge_from_similarity(S, margin: float = 0.2, groups: np.ndarray | None = None,
                          hardest: bool = False) -> Tensor:
    """Hinge terms of :func:`cross_modal_loss` given ``S[i, j] = cos(I_i, T_j)``."""
    S = as_tensor(S)
    B = S.shape[0]
    if S.ndim != 2 or S.shape != (B, B):
        raise ShapeError(f"similarity matrix must be square, got {S.shape}")
    eye = np.eye(B, dtype=bool)
    pos = tsum(S * eye.astype(S.dtype), axis=1)                  # cos(I_i, T_i)
    neg = ~eye
    if groups is not None:
        groups = np.asarray(groups)
        neg &= groups[:, None] != groups[None, :]
    neg_f = neg.astype(S.dtype)
    cost_txt = maximum0(margin - pos.reshape(B, 1) + S) * neg_f  # anchor image i, negative caption j
    cost_img = maximum0(margin - pos.reshape(1, B) + S) * neg_f  # anchor caption j, negative image i
    if hardest:
        masked = np.where(neg, S.data, -np.inf)
        row_pick = np.zeros((B, B), dtype=S.dtype)
        col_pick = np.zeros((B, B), dtype=S.dtype)
        has_row = neg.any(axis=1)
        has_col = neg.any(axis=0)
        row_pick[np.flatnonzero(has_row), masked.argmax(axis=1)[has_row]] = 1.0
        col_pick[masked.argmax(axis=0)[has_col], np.flatnonzero(has_col)] = 1.0
        return tsum(cost_txt * row_pick) + tsum(cost_img * col_pick)
    return tsum(cost_txt) + tsum(cost_img)


def cross_entropy(logits, labels) -> Tensor:
    """Mean of ``-log softmax(logits)[label]`` over the batch."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.intp)
    B, C = logits.shape
    if labels.shape != (B,):
        raise ShapeError(f"labels {labels.shape} for logits {logits.shape}")
    if B and (labels.min() < 0 or labels.max() >= C):
        raise ContractError(f"labels must lie in [0, {C})")
    onehot = np.zeros((B, C), dtype=logits.dtype)
    onehot[np.arange(B), labels] = 1.0
    return -tsum(log_softmax(logits, axis=-1) * onehot) * (1.0 / B)


def classification_loss(logits, labels) -> Tensor:
    """Cross-entropy; a sequence of logit matrices (one per tower) is averaged."""
    if isinstance(logits, (list, tuple)):
        if not logits:
            raise ContractError("no logits given")
        total = cross_entropy(logits[0], labels)
        for lg in logits[1:]:
            total = total + cross_entropy(lg, labels)
        return total * (1.0 / len(logits))
    return cross_entropy(logits, labels)


def consistency_loss(y_I, y_T_teacher) -> Tensor:
    """Mean squared difference over all elements; the teacher side is detached."""
    y_I = as_tensor(y_I)
    target = as_tensor(y_T_teacher).detach()
    if y_I.shape != target.shape:
        raise ShapeError(f"consistency_loss: {y_I.shape} vs {target.shape}")
    diff = y_I - target
    return mean(diff * diff)


def ema_update(teacher, student, decay: float) -> None:
    """In place: ``teacher <- decay * teacher + (1 - decay) * student``."""
    if not 0.0 <= decay <= 1.0:
        raise ValueError(f"decay must lie in [0, 1], got {decay}")
    t_items = list(named_tensors(teacher))
    s_items = list(named_tensors(student))
    if [n for n, _ in t_items] != [n for n, _ in s_items]:
        raise ShapeError("teacher and student parameter trees differ")
    for (name, t), (_, s) in zip(t_items, s_items):
        if t.shape != s.shape:
            raise ShapeError(f"{name}: teacher {t.shape} vs student {s.shape}")
        t.data *= decay
        t.data += (1.0 - decay) * s.data


def make_teacher(student):
    """Detached deep copy of a parameter tree."""
    return frozen_copy(student)


def total_loss(losses: Sequence[Tensor | None], sigma) -> Tensor:
    """Uncertainty-weighted sum. ``None`` entries are disabled terms and skipped.

    ``sigma`` is a DtclState, a sequence of scalar tensors, or a vector tensor.
    """
    if isinstance(sigma, DtclState):
        sigma = sigma.sigma
    n_scales = sigma.shape[0] if isinstance(sigma, Tensor) else len(sigma)
    if len(losses) > n_scales:
        raise ShapeError(f"{len(losses)} losses but {n_scales} scales")
    out = None
    for i, L in enumerate(losses):
        if L is None:
            continue
        s = sigma[i]
        s2 = s * s
        term = as_tensor(L) / (s2 * 2.0) + log_op(s2 + 1.0)
        out = term if out is None else out + term
    if out is None:
        raise ContractError("total_loss needs at least one enabled term")
    return out
