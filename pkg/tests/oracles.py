"""Independent reference implementations: plain Python floats, explicit loops.

Nothing here touches the tensor library. Matrices are lists of rows.
"""
from __future__ import annotations

import math


def vec(x):
    return [float(v) for v in x]


def mat(x):
    return [[float(v) for v in row] for row in x]


def dot(a, b):
    s = 0.0
    for x, y in zip(a, b):
        s += x * y
    return s


def vecmat(x, W):
    """``x @ W`` for a row vector ``x`` and matrix ``W`` (rows = len(x))."""
    cols = len(W[0])
    out = [0.0] * cols
    for i, xi in enumerate(x):
        row = W[i]
        for j in range(cols):
            out[j] += xi * row[j]
    return out


def matmul(A, B):
    return [vecmat(row, B) for row in A]


def vadd(a, b):
    return [x + y for x, y in zip(a, b)]


def vscale(a, c):
    return [c * x for x in a]


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x)) if x >= 0 else math.exp(x) / (1.0 + math.exp(x))


def gelu(x):
    return x * 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def softmax(xs):
    m = max(xs)
    e = [math.exp(x - m) for x in xs]
    z = sum(e)
    return [v / z for v in e]


# -- attention -----------------------------------------------------------------
def attention(Q, K, V):
    """Row-wise ``softmax(Q K^T / sqrt(d)) V``."""
    d = len(Q[0])
    out = []
    for q in Q:
        w = softmax([dot(q, k) / math.sqrt(d) for k in K])
        row = [0.0] * len(V[0])
        for wj, v in zip(w, V):
            for c in range(len(row)):
                row[c] += wj * v[c]
        out.append(row)
    return out


def diff_attention(E, W_Q, W_K, W_V, lam):
    Q, K, V = matmul(E, W_Q), matmul(E, W_K), matmul(E, W_V)
    h = len(Q[0]) // 2
    A1 = attention([q[:h] for q in Q], [k[:h] for k in K], V)
    A2 = attention([q[h:] for q in Q], [k[h:] for k in K], V)
    return [[a - lam * b for a, b in zip(r1, r2)] for r1, r2 in zip(A1, A2)]


def lambda_value(q1, k1, q2, k2, lam_init):
    return math.exp(dot(q1, k1)) - math.exp(dot(q2, k2)) + lam_init


# -- GRU ----------------------------------------------------------------------
def gru_step(x, h, g):
    """One GRU step; ``g`` maps names W_z, U_z, b_z, ... to nested lists."""
    z = [sigmoid(a + b + c) for a, b, c in zip(vecmat(x, g["W_z"]), vecmat(h, g["U_z"]), g["b_z"])]
    r = [sigmoid(a + b + c) for a, b, c in zip(vecmat(x, g["W_r"]), vecmat(h, g["U_r"]), g["b_r"])]
    rh = [ri * hi for ri, hi in zip(r, h)]
    cand = [math.tanh(a + b + c) for a, b, c in zip(vecmat(x, g["W_h"]), vecmat(rh, g["U_h"]), g["b_h"])]
    return [(1.0 - zi) * hi + zi * ci for zi, hi, ci in zip(z, h, cand)]


def bigru(seq, fwd, bwd):
    H = len(fwd["b_z"])
    T = len(seq)
    hf, hb = [0.0] * H, [0.0] * H
    outs_f, outs_b = [None] * T, [None] * T
    for t in range(T):
        hf = gru_step(seq[t], hf, fwd)
        outs_f[t] = hf
    for t in reversed(range(T)):
        hb = gru_step(seq[t], hb, bwd)
        outs_b[t] = hb
    return [f + b for f, b in zip(outs_f, outs_b)]


def attention_pool(h, W, b, u):
    scores = [dot([math.tanh(v) for v in vadd(vecmat(ht, W), b)], u) for ht in h]
    alpha = softmax(scores)
    s = [0.0] * len(h[0])
    for a, ht in zip(alpha, h):
        for c in range(len(s)):
            s[c] += a * ht[c]
    return s, alpha


def hierarchical(tokens, lengths, p):
    """``p``: dicts ``word_fwd, word_bwd, sent_fwd, sent_bwd`` plus W_w, b_w, u_w, W_s, b_s, u_s."""
    sents, start = [], 0
    for n in lengths:
        h = bigru(tokens[start:start + n], p["word_fwd"], p["word_bwd"])
        s, _ = attention_pool(h, p["W_w"], p["b_w"], p["u_w"])
        sents.append(s)
        start += n
    hs = bigru(sents, p["sent_fwd"], p["sent_bwd"])
    v, _ = attention_pool(hs, p["W_s"], p["b_s"], p["u_s"])
    return v


# -- transformer block ---------------------------------------------------------
def layer_norm(x, w, b, eps=1e-5):
    mu = sum(x) / len(x)
    var = sum((v - mu) ** 2 for v in x) / len(x)
    return [(v - mu) / math.sqrt(var + eps) * wi + bi for v, wi, bi in zip(x, w, b)]


def stub_block(X, p):
    """Pre-norm single-head block: ``x + Attn(LN x)``, then ``+ FFN(LN x)``."""
    H = [layer_norm(x, p["ln1_w"], p["ln1_b"]) for x in X]
    A = attention(matmul(H, p["W_q"]), matmul(H, p["W_k"]), matmul(H, p["W_v"]))
    X = [vadd(x, vecmat(a, p["W_o"])) for x, a in zip(X, A)]
    out = []
    for x in X:
        h = layer_norm(x, p["ln2_w"], p["ln2_b"])
        f = [gelu(v) for v in vadd(vecmat(h, p["W_1"]), p["b_1"])]
        out.append(vadd(vadd(x, vecmat(f, p["W_2"])), p["b_2"]))
    return out


# -- retrieval -------------------------------------------------------------------
def cosine(a, b):
    return dot(a, b) / (math.sqrt(dot(a, a)) * math.sqrt(dot(b, b)))


def similarity(imgs, txts):
    return [[cosine(a, b) for b in txts] for a in imgs]


def rank_of(row, j):
    """0-based rank of candidate ``j``: strictly better entries plus ties at lower index."""
    r = 0
    for c, v in enumerate(row):
        if v > row[j] or (v == row[j] and c < j):
            r += 1
    return r


def recall(S, caption_image, k, direction):
    N, M = len(S), len(S[0])
    hits = 0
    if direction == "i2t":
        for i in range(N):
            ranks = [rank_of(S[i], j) for j in range(M) if caption_image[j] == i]
            hits += bool(ranks) and min(ranks) < k
        return 100.0 * hits / N
    for j in range(M):
        col = [S[i][j] for i in range(N)]
        hits += rank_of(col, caption_image[j]) < k
    return 100.0 * hits / M


# -- losses ----------------------------------------------------------------------
def hinge(S, margin, groups=None):
    B = len(S)
    total = 0.0
    for i in range(B):
        for j in range(B):
            if i == j or (groups is not None and groups[i] == groups[j]):
                continue
            total += max(0.0, margin - S[i][i] + S[i][j])   # image i, negative caption j
            total += max(0.0, margin - S[j][j] + S[i][j])   # caption j, negative image i
    return total


def adam(x0, grad_fn, steps, lr, b1=0.9, b2=0.999, eps=1e-8):
    x, m, v = x0, 0.0, 0.0
    for t in range(1, steps + 1):
        g = grad_fn(x)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        x = x - lr * mhat / (math.sqrt(vhat) + eps)
    return x


def ema_closed_form(t0, s, decay, n):
    """Teacher after ``n`` updates toward a constant student ``s``."""
    return decay ** n * t0 + (1.0 - decay ** n) * s
