"""Frozen stand-in towers and the common-space projection.

The stub blocks are ordinary pre-norm transformer blocks with fixed random
weights. They only exist to give the adapters several realistic insertion
points; they are never trained.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .data import PairedDataset, load_features, pad_tokens, save_features  # noqa: F401  (re-exported)
from .exceptions import ContractError, ShapeError
from .numerics import Tensor, as_tensor, gelu, l2_normalize, layer_norm, matmul, softmax, transpose, tsum
from .params import named_tensors, param


@dataclass
class StubBlockParams:
    ln1_w: Tensor
    ln1_b: Tensor
    W_q: Tensor
    W_k: Tensor
    W_v: Tensor
    W_o: Tensor
    ln2_w: Tensor
    ln2_b: Tensor
    W_1: Tensor
    b_1: Tensor
    W_2: Tensor
    b_2: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, d_model: int, ffn_mult: int = 4, scale: float = 0.5) -> StubBlockParams:
        d_ff = ffn_mult * d_model

        def w(shape):
            return param(rng, shape, scale=scale / math.sqrt(shape[0]), requires_grad=False)

        def const(value, shape):
            return Tensor(np.full(shape, value), requires_grad=False)

        return cls(
            ln1_w=const(1.0, (d_model,)), ln1_b=const(0.0, (d_model,)),
            W_q=w((d_model, d_model)), W_k=w((d_model, d_model)),
            W_v=w((d_model, d_model)), W_o=w((d_model, d_model)),
            ln2_w=const(1.0, (d_model,)), ln2_b=const(0.0, (d_model,)),
            W_1=w((d_model, d_ff)), b_1=const(0.0, (d_ff,)),
            W_2=w((d_ff, d_model)), b_2=const(0.0, (d_model,)),
        )


@dataclass
class StubEncoder:
    """Stack of frozen transformer blocks, deterministic given ``seed``."""

    blocks: list[StubBlockParams]
    d_model: int

    @classmethod
    def build(cls, d_model: int, n_blocks: int = 2, seed: int = 0, ffn_mult: int = 4) -> StubEncoder:
        rng = np.random.default_rng(seed)
        return cls([StubBlockParams.init(rng, d_model, ffn_mult) for _ in range(n_blocks)], d_model)

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    def fingerprint(self) -> str:
        """SHA-256 over all parameter bytes, used to prove the tower stays frozen."""
        h = hashlib.sha256()
        for name, t in named_tensors(self.blocks):
            h.update(name.encode())
            h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()


def stub_block_forward(x, p: StubBlockParams, mask: np.ndarray | None = None) -> Tensor:
    """``x + Attn(LN(x))`` then ``+ FFN(LN(.))``; single head, GELU FFN."""
    x = as_tensor(x)
    if x.shape[-1] != p.W_q.shape[0]:
        raise ShapeError(f"stub block: input width {x.shape[-1]} vs d_model {p.W_q.shape[0]}")
    h = layer_norm(x, p.ln1_w, p.ln1_b)
    q, k, v = matmul(h, p.W_q), matmul(h, p.W_k), matmul(h, p.W_v)
    scores = matmul(q, transpose(k)) * (1.0 / math.sqrt(q.shape[-1]))
    km = None if mask is None else np.asarray(mask, dtype=bool)[..., None, :]
    x = x + matmul(matmul(softmax(scores, axis=-1, mask=km), v), p.W_o)
    h = layer_norm(x, p.ln2_w, p.ln2_b)
    return x + matmul(gelu(matmul(h, p.W_1) + p.b_1), p.W_2) + p.b_2


def stub_forward(x, enc: StubEncoder, mask: np.ndarray | None = None) -> list[Tensor]:
    """Per-block outputs of the frozen tower (just ``[x]`` when there are no blocks)."""
    x = as_tensor(x)
    if x.shape[-1] != enc.d_model:
        raise ShapeError(f"stub_forward: input width {x.shape[-1]} vs d_model {enc.d_model}")
    if not enc.blocks:
        return [x]
    feats = []
    for bp in enc.blocks:
        x = stub_block_forward(x, bp, mask)
        feats.append(x)
    return feats


@dataclass
class ProjectionHead:
    W: Tensor  # [d_model, d_common]
    b: Tensor  # [d_common]

    @classmethod
    def init(cls, rng: np.random.Generator, d_model: int, d_common: int) -> ProjectionHead:
        return cls(param(rng, (d_model, d_common)), Tensor(np.zeros(d_common), requires_grad=True))


def pool_tokens(feat, mask: np.ndarray | None = None, pooling: str = "mean") -> Tensor:
    """Sequence to vector: masked mean, or the first token for ``"cls"``."""
    feat = as_tensor(feat)
    if feat.shape[-2] < 1:
        raise ContractError("cannot pool an empty sequence")
    if pooling == "cls":
        return feat[..., 0, :]
    if pooling != "mean":
        raise ValueError(f"unknown pooling {pooling!r}")
    if mask is None:
        return tsum(feat, axis=-2) * (1.0 / feat.shape[-2])
    m = np.asarray(mask, dtype=feat.dtype)
    return tsum(feat * m[..., None], axis=-2) / m.sum(axis=-1, keepdims=True)


def project_common(feat, head: ProjectionHead, mask: np.ndarray | None = None,
                   pooling: str = "mean") -> Tensor:
    """Pool tokens, map linearly to the common space, L2-normalise (norm + 1e-12)."""
    pooled = pool_tokens(feat, mask, pooling)
    return l2_normalize(matmul(pooled, head.W) + head.b, axis=-1, eps=1e-12)
