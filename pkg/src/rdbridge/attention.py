"""Differential attention and hierarchical (word/sentence) attention.

All functions accept a single sequence ``[T, d]`` or a right-padded batch
``[B, T, d]`` with a boolean ``mask`` ``[B, T]`` marking real positions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exceptions import ContractError, ShapeError
from .numerics import (
    Tensor, as_tensor, concat, exp_op, matmul, mul, sigmoid, softmax, stack, take_rows,
    tanh_op, transpose, tsum,
)
from .params import param, zeros


# ---------------------------------------------------------------------------
# differential attention
# ---------------------------------------------------------------------------
@dataclass
class DiffAttnParams:
    """Single-head differential attention.

    ``W_Q`` and ``W_K`` project to ``2 * d_h``; the first half of the output
    columns gives Q1/K1, the second half Q2/K2.
    """

    W_Q: Tensor
    W_K: Tensor
    W_V: Tensor
    lambda_q1: Tensor
    lambda_k1: Tensor
    lambda_q2: Tensor
    lambda_k2: Tensor
    lambda_init: float = 0.8

    def __post_init__(self):
        if not 0.0 < self.lambda_init < 1.0:
            raise ContractError(f"lambda_init must lie in (0, 1), got {self.lambda_init}")
        if self.W_Q.shape[-1] % 2 or self.W_K.shape[-1] % 2:
            raise ShapeError("Q/K projection width must be even")

    @property
    def head_dim(self) -> int:
        return self.W_V.shape[-1]

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, d_h: int, lambda_init: float = 0.8) -> DiffAttnParams:
        return cls(
            W_Q=param(rng, (d_in, 2 * d_h)),
            W_K=param(rng, (d_in, 2 * d_h)),
            W_V=param(rng, (d_in, d_h)),
            lambda_q1=param(rng, (d_h,), scale=0.1),
            lambda_k1=param(rng, (d_h,), scale=0.1),
            lambda_q2=param(rng, (d_h,), scale=0.1),
            lambda_k2=param(rng, (d_h,), scale=0.1),
            lambda_init=lambda_init,
        )


def lambda_value(p: DiffAttnParams) -> Tensor:
    """``exp(lq1 . lk1) - exp(lq2 . lk2) + lambda_init`` as a scalar Tensor."""
    vecs = (p.lambda_q1, p.lambda_k1, p.lambda_q2, p.lambda_k2)
    if len({v.shape for v in vecs}) != 1:
        raise ShapeError(f"lambda vectors differ in shape: {[v.shape for v in vecs]}")
    return (exp_op(tsum(p.lambda_q1 * p.lambda_k1))
            - exp_op(tsum(p.lambda_q2 * p.lambda_k2)) + p.lambda_init)


def _key_mask(mask: np.ndarray | None) -> np.ndarray | None:
    return None if mask is None else np.asarray(mask, dtype=bool)[..., None, :]


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """``softmax(q k^T / sqrt(d)) v`` with an optional key mask."""
    d = q.shape[-1]
    scores = matmul(q, transpose(k)) * (1.0 / math.sqrt(d))
    return matmul(softmax(scores, axis=-1, mask=_key_mask(mask)), v)


def diff_attention(E, p: DiffAttnParams, mask: np.ndarray | None = None,
                   lam: Tensor | float | None = None, return_maps: bool = False):
    """Difference of two softmax maps applied to V: ``(A1 - lambda * A2) V``.

    Args:
        E: ``[n, d_in]`` or ``[B, n, d_in]``.
        p: parameters; both maps are scaled by ``sqrt(d_h)``.
        mask: optional key mask ``[B, n]``.
        lam: override for lambda (tests use 0 to recover plain attention).
        return_maps: also return ``(A1, A2, lambda)``.
    """
    E = as_tensor(E)
    if E.shape[-1] != p.W_Q.shape[0]:
        raise ShapeError(f"diff_attention: input width {E.shape[-1]} but W_Q is {p.W_Q.shape}")
    if E.shape[-2] < 1:
        raise ContractError("diff_attention needs at least one token")
    d_h = p.W_Q.shape[1] // 2
    Q = matmul(E, p.W_Q)
    K = matmul(E, p.W_K)
    V = matmul(E, p.W_V)
    Q1, Q2 = Q[..., :d_h], Q[..., d_h:]
    K1, K2 = K[..., :d_h], K[..., d_h:]
    scale = 1.0 / math.sqrt(d_h)
    km = _key_mask(mask)
    A1 = softmax(matmul(Q1, transpose(K1)) * scale, axis=-1, mask=km)
    A2 = softmax(matmul(Q2, transpose(K2)) * scale, axis=-1, mask=km)
    if lam is None:
        lam = lambda_value(p)
    out = matmul(A1, V) - mul(lam, matmul(A2, V))
    if return_maps:
        return out, (A1, A2, lam)
    return out


# ---------------------------------------------------------------------------
# bidirectional GRU
# ---------------------------------------------------------------------------
@dataclass
class GRUParams:
    W_z: Tensor
    U_z: Tensor
    b_z: Tensor
    W_r: Tensor
    U_r: Tensor
    b_r: Tensor
    W_h: Tensor
    U_h: Tensor
    b_h: Tensor

    @property
    def hidden_size(self) -> int:
        return self.U_z.shape[0]

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, hidden: int) -> GRUParams:
        def w():
            return param(rng, (d_in, hidden))

        def u():
            return param(rng, (hidden, hidden))

        return cls(w(), u(), zeros((hidden,)), w(), u(), zeros((hidden,)), w(), u(), zeros((hidden,)))


@dataclass
class BiGRUParams:
    forward: GRUParams
    backward: GRUParams

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, hidden: int) -> BiGRUParams:
        return cls(GRUParams.init(rng, d_in, hidden), GRUParams.init(rng, d_in, hidden))


def _gru_scan(x: Tensor, p: GRUParams, mask: np.ndarray, reverse: bool) -> list[Tensor]:
    """Run one direction over ``x [B, T, d]``; returns T hidden states ``[B, H]``.

    Padded steps (mask False) carry the previous hidden state through unchanged.
    """
    B, T, _ = x.shape
    H = p.hidden_size
    xz = matmul(x, p.W_z) + p.b_z
    xr = matmul(x, p.W_r) + p.b_r
    xh = matmul(x, p.W_h) + p.b_h
    h = Tensor(np.zeros((B, H), dtype=x.dtype))
    states: list[Tensor | None] = [None] * T
    steps = range(T - 1, -1, -1) if reverse else range(T)
    for t in steps:
        z = sigmoid(xz[:, t, :] + matmul(h, p.U_z))
        r = sigmoid(xr[:, t, :] + matmul(h, p.U_r))
        h_cand = tanh_op(xh[:, t, :] + matmul(r * h, p.U_h))
        h_new = h + z * (h_cand - h)
        m = mask[:, t]
        if not m.all():
            keep = m[:, None].astype(x.dtype)
            h_new = h + keep * (h_new - h)
        h = h_new
        states[t] = h
    return states


def bigru_forward(seq, p: BiGRUParams, mask: np.ndarray | None = None) -> Tensor:
    """Bidirectional GRU annotations, forward and backward states concatenated.

    ``z = sig(W_z x + U_z h + b_z)``, ``r = sig(W_r x + U_r h + b_r)``,
    ``h~ = tanh(W_h x + U_h (r*h) + b_h)``, ``h' = (1-z) h + z h~``, from ``h = 0``.

    Returns ``[T, 2H]`` (or ``[B, T, 2H]`` for batched input).
    """
    seq = as_tensor(seq)
    single = seq.ndim == 2
    if single:
        seq = seq.reshape((1,) + seq.shape)
    if seq.ndim != 3:
        raise ShapeError(f"bigru_forward expects [T, d] or [B, T, d], got {seq.shape}")
    if seq.shape[1] < 1:
        raise ContractError("bigru_forward needs T >= 1")
    if seq.shape[-1] != p.forward.W_z.shape[0]:
        raise ShapeError(f"bigru_forward: input width {seq.shape[-1]} vs W_z {p.forward.W_z.shape}")
    B, T, _ = seq.shape
    mask = np.ones((B, T), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    fwd = stack(_gru_scan(seq, p.forward, mask, reverse=False), axis=1)
    bwd = stack(_gru_scan(seq, p.backward, mask, reverse=True), axis=1)
    out = concat([fwd, bwd], axis=-1)
    return out.reshape(out.shape[1:]) if single else out


# ---------------------------------------------------------------------------
# hierarchical attention
# ---------------------------------------------------------------------------
@dataclass
class HierAttnParams:
    """Word- and sentence-level BiGRUs with their attention pooling layers."""

    word_gru: BiGRUParams
    W_w: Tensor
    b_w: Tensor
    u_w: Tensor
    sent_gru: BiGRUParams
    W_s: Tensor
    b_s: Tensor
    u_s: Tensor

    @property
    def annotation_width(self) -> int:
        return 2 * self.word_gru.forward.hidden_size

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, hidden: int) -> HierAttnParams:
        a = 2 * hidden
        return cls(
            word_gru=BiGRUParams.init(rng, d_in, hidden),
            W_w=param(rng, (a, a)), b_w=zeros((a,)), u_w=param(rng, (a,)),
            sent_gru=BiGRUParams.init(rng, a, hidden),
            W_s=param(rng, (a, a)), b_s=zeros((a,)), u_s=param(rng, (a,)),
        )


def attention_pool(h, W, b, u, mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """``u_t = tanh(W h_t + b)``, ``alpha = softmax_t(u_t . u)``, ``s = sum_t alpha_t h_t``.

    Returns ``(s, alpha)`` with shapes ``[2H], [T]`` or ``[B, 2H], [B, T]``.
    """
    h = as_tensor(h)
    if h.shape[-2] < 1:
        raise ContractError("attention pooling needs at least one position")
    hidden = tanh_op(matmul(h, W) + b)
    scores = matmul(hidden, u)
    alpha = softmax(scores, axis=-1, mask=mask)
    s = tsum(h * alpha.reshape(alpha.shape + (1,)), axis=-2)
    return s, alpha


def word_attention(h, p: HierAttnParams, mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    return attention_pool(h, p.W_w, p.b_w, p.u_w, mask)


def sentence_attention(h_sent, p: HierAttnParams, mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    return attention_pool(h_sent, p.W_s, p.b_s, p.u_s, mask)


@dataclass
class SentenceLayout:
    """Gather indices that regroup padded token rows into sentences and back.

    Built from per-caption sentence lengths; tokens of each caption are laid
    out contiguously, sentence after sentence, from position 0.
    """

    n_captions: int
    max_tokens: int
    token_index: np.ndarray      # [n_sent, max_sent_len] into flattened [n_captions * max_tokens]
    word_mask: np.ndarray        # [n_sent, max_sent_len]
    sentence_index: np.ndarray   # [n_captions, max_sents] into n_sent (n_sent = zero pad row)
    sentence_mask: np.ndarray    # [n_captions, max_sents]

    @classmethod
    def build(cls, sentence_lengths: Sequence[Sequence[int]], max_tokens: int | None = None) -> SentenceLayout:
        lengths = [list(map(int, ls)) for ls in sentence_lengths]
        for j, ls in enumerate(lengths):
            if not ls:
                raise ContractError(f"caption {j} has no sentences")
            if any(n < 1 for n in ls):
                raise ContractError(f"caption {j} has an empty sentence: {ls}")
        totals = [sum(ls) for ls in lengths]
        T = max(totals) if max_tokens is None else max_tokens
        if max(totals) > T:
            raise ShapeError(f"caption with {max(totals)} tokens exceeds padded width {T}")
        n_sent = sum(len(ls) for ls in lengths)
        max_len = max(max(ls) for ls in lengths)
        max_sents = max(len(ls) for ls in lengths)
        token_index = np.zeros((n_sent, max_len), dtype=np.intp)
        word_mask = np.zeros((n_sent, max_len), dtype=bool)
        sentence_index = np.full((len(lengths), max_sents), n_sent, dtype=np.intp)
        sentence_mask = np.zeros((len(lengths), max_sents), dtype=bool)
        k = 0
        for j, ls in enumerate(lengths):
            start = 0
            for i, n in enumerate(ls):
                token_index[k, :n] = j * T + start + np.arange(n)
                token_index[k, n:] = j * T + start
                word_mask[k, :n] = True
                sentence_index[j, i] = k
                sentence_mask[j, i] = True
                start += n
                k += 1
        return cls(len(lengths), T, token_index, word_mask, sentence_index, sentence_mask)


def hierarchical_attention(tokens, sentence_lengths, p: HierAttnParams,
                           return_weights: bool = False):
    """Word attention per sentence, then BiGRU + attention over sentence vectors.

    Args:
        tokens: ``[T, d]`` for one caption, or padded ``[N, T_max, d]``.
        sentence_lengths: sentence lengths of the caption (``list[int]``), or
            one such list per caption for batched input. A SentenceLayout is
            also accepted for batched input.
        p: word/sentence parameters.

    Returns:
        text vector ``v`` (``[2H]`` or ``[N, 2H]``); with ``return_weights``
        also a dict of word and sentence attention weights.
    """
    tokens = as_tensor(tokens)
    single = tokens.ndim == 2
    if single:
        if isinstance(sentence_lengths, SentenceLayout):
            raise ContractError("pass plain sentence lengths for a single caption")
        if sum(sentence_lengths) != tokens.shape[0]:
            raise ShapeError(f"sentence lengths {list(sentence_lengths)} do not cover {tokens.shape[0]} tokens")
        tokens = tokens.reshape((1,) + tokens.shape)
        sentence_lengths = [sentence_lengths]
    layout = sentence_lengths if isinstance(sentence_lengths, SentenceLayout) else \
        SentenceLayout.build(sentence_lengths, max_tokens=tokens.shape[1])
    N, T, d = tokens.shape
    flat = tokens.reshape((N * T, d))
    words = take_rows(flat, layout.token_index)                       # [n_sent, L, d]
    h_words = bigru_forward(words, p.word_gru, layout.word_mask)      # [n_sent, L, 2H]
    s, word_alpha = word_attention(h_words, p, layout.word_mask)      # [n_sent, 2H]
    padded = concat([s, Tensor(np.zeros((1, s.shape[-1]), dtype=s.dtype))], axis=0)
    sents = take_rows(padded, layout.sentence_index)                  # [N, S, 2H]
    h_sents = bigru_forward(sents, p.sent_gru, layout.sentence_mask)
    v, sent_alpha = sentence_attention(h_sents, p, layout.sentence_mask)
    if single:
        v = v.reshape(v.shape[1:])
    if return_weights:
        return v, {"word": word_alpha, "sentence": sent_alpha, "layout": layout}
    return v
