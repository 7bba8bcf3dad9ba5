"""Retrieval metrics: cosine similarity, recall@K in both directions, mR, folds.

Ranking ties are broken toward the lower candidate index.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ContractError, ParseError
from .numerics import Tensor, as_tensor

KS = (1, 5, 10)


def similarity_matrix(img_embs, txt_embs) -> Tensor:
    """``S[i, j] = cos(image_i, caption_j)`` (inputs need not be pre-normalised).

    Zero rows are left as zero vectors, giving similarity 0.
    """
    a = as_tensor(img_embs).data
    b = as_tensor(txt_embs).data
    na = np.linalg.norm(a, axis=1, keepdims=True)
    nb = np.linalg.norm(b, axis=1, keepdims=True)
    a = a / np.where(na == 0, 1.0, na)
    b = b / np.where(nb == 0, 1.0, nb)
    return Tensor(a @ b.T)


def rank_positions(scores: np.ndarray) -> np.ndarray:
    """0-based rank of every candidate in each row (descending, ties to lower index)."""
    order = np.argsort(-scores, axis=1, kind="stable")
    ranks = np.empty_like(order)
    rows = np.arange(scores.shape[0])[:, None]
    ranks[rows, order] = np.arange(scores.shape[1])[None, :]
    return ranks


def _as_array(sim) -> np.ndarray:
    return sim.data if isinstance(sim, Tensor) else np.asarray(sim, dtype=np.float64)


def recall_at_k(sim, caption_image: np.ndarray, k: int, direction: str = "i2t") -> float:
    """Percentage of queries whose ground truth ranks within the top ``k`` (inclusive).

    Args:
        sim: ``[N_images, M_captions]`` similarities.
        caption_image: image position of each caption, length M.
        direction: ``"i2t"`` (hit if any of the image's captions is in the
            top k) or ``"t2i"`` (hit if the caption's image is in the top k).
    """
    S = _as_array(sim)
    caption_image = np.asarray(caption_image, dtype=np.int64)
    N, M = S.shape
    if caption_image.shape != (M,):
        raise ContractError(f"caption_image has shape {caption_image.shape}, expected ({M},)")
    if direction == "i2t":
        if k > M:
            raise ContractError(f"k={k} exceeds the {M} candidate captions")
        ranks = rank_positions(S)                               # [N, M]
        gt = caption_image[None, :] == np.arange(N)[:, None]
        best = np.where(gt, ranks, M).min(axis=1)
        return 100.0 * float(np.mean(best < k)) if N else 0.0
    if direction == "t2i":
        if k > N:
            raise ContractError(f"k={k} exceeds the {N} candidate images")
        ranks = rank_positions(S.T)                             # [M, N]
        hit = ranks[np.arange(M), caption_image] < k
        return 100.0 * float(np.mean(hit)) if M else 0.0
    raise ValueError(f"direction must be 'i2t' or 't2i', got {direction!r}")


def mean_recall(i2t_r1: float, i2t_r5: float, i2t_r10: float,
                t2i_r1: float, t2i_r5: float, t2i_r10: float) -> float:
    """Arithmetic mean of the six recall values."""
    return (i2t_r1 + i2t_r5 + i2t_r10 + t2i_r1 + t2i_r5 + t2i_r10) / 6.0


def top_k(sim, k: int) -> np.ndarray:
    """Candidate indices of the ``k`` best matches per row."""
    S = _as_array(sim)
    return np.argsort(-S, axis=1, kind="stable")[:, :min(k, S.shape[1])]


@dataclass
class RetrievalReport:
    """Recall@{1,5,10} per direction (percent), mR, and top-K id lists."""

    i2t_r1: float
    i2t_r5: float
    i2t_r10: float
    t2i_r1: float
    t2i_r5: float
    t2i_r10: float
    mR: float
    topk_i2t: dict = field(default_factory=dict)
    topk_t2i: dict = field(default_factory=dict)

    @property
    def values(self) -> tuple[float, ...]:
        return (self.i2t_r1, self.i2t_r5, self.i2t_r10, self.t2i_r1, self.t2i_r5, self.t2i_r10)

    def to_text(self, include_topk: bool = True) -> str:
        """Line-oriented form; TOPK query ids are ``I<image_id>`` or ``T<caption_id>``."""
        lines = []
        for name, (a, b, c) in (("I2T", self.values[:3]), ("T2I", self.values[3:])):
            lines += [f"{name} R@1 {a!r}", f"{name} R@5 {b!r}", f"{name} R@10 {c!r}"]
        lines.append(f"mR {self.mR!r}")
        if include_topk:
            for prefix, table in (("I", self.topk_i2t), ("T", self.topk_t2i)):
                for qid, ids in table.items():
                    lines.append(f"TOPK {prefix}{qid} " + " ".join(str(int(i)) for i in ids))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> RetrievalReport:
        vals: dict[str, float] = {}
        topk_i2t: dict[int, list[int]] = {}
        topk_t2i: dict[int, list[int]] = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            parts = line.split()
            if not parts:
                continue
            try:
                if parts[0] in ("I2T", "T2I") and len(parts) == 3:
                    vals[f"{parts[0].lower()}_r{parts[1][2:]}"] = float(parts[2])
                elif parts[0] == "mR" and len(parts) == 2:
                    vals["mR"] = float(parts[1])
                elif parts[0] == "TOPK":
                    table = topk_i2t if parts[1][0] == "I" else topk_t2i
                    table[int(parts[1][1:])] = [int(p) for p in parts[2:]]
                else:
                    raise ValueError(line)
            except (ValueError, IndexError):
                raise ParseError(f"unrecognised report line {line!r}", lineno) from None
        try:
            return cls(**vals, topk_i2t=topk_i2t, topk_t2i=topk_t2i)
        except TypeError:
            raise ParseError(f"report is missing fields; found {sorted(vals)}") from None


def evaluate_similarity(sim, caption_image: np.ndarray, image_ids=None, caption_ids=None,
                        topk: int = 5) -> RetrievalReport:
    """Full report from a similarity matrix and the caption-to-image grouping."""
    S = _as_array(sim)
    N, M = S.shape
    image_ids = np.arange(N) if image_ids is None else np.asarray(image_ids)
    caption_ids = np.arange(M) if caption_ids is None else np.asarray(caption_ids)
    # k is clipped to the candidate count so tiny evaluation sets still report
    r = [recall_at_k(S, caption_image, min(k, M), "i2t") for k in KS]
    r += [recall_at_k(S, caption_image, min(k, N), "t2i") for k in KS]
    report = RetrievalReport(*r, mR=mean_recall(*r))
    if topk:
        report.topk_i2t = {int(image_ids[i]): caption_ids[row].tolist() for i, row in enumerate(top_k(S, topk))}
        report.topk_t2i = {int(caption_ids[j]): image_ids[row].tolist() for j, row in enumerate(top_k(S.T, topk))}
    return report


def kfold_splits(n: int, k: int, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Deterministic image-level ``(train, val, test)`` index partitions.

    ``k == 1`` gives one 80/10/10 split. For ``k >= 2`` the shuffled indices
    are cut into ``k`` near-equal folds; fold ``i`` is held out, its first
    half (rounded down) becoming validation and the rest test, so each fold's
    held-out part is disjoint from every other fold's and together they cover
    all indices. With ``k = 5`` this is again 80/10/10.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < k:
        raise ContractError(f"cannot make {k} folds from {n} items")
    perm = np.random.default_rng(seed).permutation(n)
    if k == 1:
        n_val = int(round(0.1 * n))
        n_test = int(round(0.1 * n))
        val, test, train = perm[:n_val], perm[n_val:n_val + n_test], perm[n_val + n_test:]
        return [(np.sort(train), np.sort(val), np.sort(test))]
    folds = np.array_split(perm, k)
    out = []
    for i, held in enumerate(folds):
        half = len(held) // 2
        train = np.concatenate([f for j, f in enumerate(folds) if j != i])
        out.append((np.sort(train), np.sort(held[:half]), np.sort(held[half:])))
    return out
