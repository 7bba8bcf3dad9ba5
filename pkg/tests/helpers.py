"""Shared test utilities."""


def gru_dict(g):
    return {name: getattr(g, name).data.tolist() for name in
            ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_h", "U_h", "b_h")}


def hier_dict(p):
    return {
        "word_fwd": gru_dict(p.word_gru.forward), "word_bwd": gru_dict(p.word_gru.backward),
        "sent_fwd": gru_dict(p.sent_gru.forward), "sent_bwd": gru_dict(p.sent_gru.backward),
        "W_w": p.W_w.data.tolist(), "b_w": p.b_w.data.tolist(), "u_w": p.u_w.data.tolist(),
        "W_s": p.W_s.data.tolist(), "b_s": p.b_s.data.tolist(), "u_s": p.u_s.data.tolist(),
    }


def randomize(obj, rng, scale=0.5):
    """Overwrite every tensor in a parameter tree with Gaussian values."""
    from rdbridge.params import named_tensors

    for _, t in named_tensors(obj):
        t.data[...] = rng.normal(size=t.shape) * scale
    return obj


# -- oracle sweeps shared by the module tests and the acceptance suite -----------
def sweep_diff_attention(n_instances=50, seed=0):
    """Max abs deviation of diff_attention from the scalar-loop oracle."""
    import numpy as np

    import oracles
    from rdbridge.attention import DiffAttnParams, diff_attention, lambda_value

    worst = 0.0
    for k in range(n_instances):
        rng = np.random.default_rng((seed, k))
        n, d_in, d_h = int(rng.integers(1, 6)), int(rng.integers(1, 6)), int(rng.integers(1, 4))
        p = randomize(DiffAttnParams.init(rng, d_in, d_h), rng)
        E = rng.normal(size=(n, d_in))
        got = diff_attention(E, p).data
        lam = oracles.lambda_value(p.lambda_q1.data, p.lambda_k1.data, p.lambda_q2.data, p.lambda_k2.data,
                                   p.lambda_init)
        assert abs(lambda_value(p).item() - lam) < 1e-12
        want = oracles.diff_attention(E.tolist(), p.W_Q.data.tolist(), p.W_K.data.tolist(), p.W_V.data.tolist(), lam)
        worst = max(worst, float(np.abs(got - np.array(want)).max()))
    return worst


def sweep_bigru(n_instances=50, seed=0):
    import numpy as np

    import oracles
    from rdbridge.attention import BiGRUParams, bigru_forward

    worst = 0.0
    for k in range(n_instances):
        rng = np.random.default_rng((seed, k, 1))
        T, d, H = int(rng.integers(1, 6)), int(rng.integers(1, 5)), int(rng.integers(1, 4))
        p = randomize(BiGRUParams.init(rng, d, H), rng, 0.8)
        x = rng.normal(size=(T, d))
        got = bigru_forward(x, p).data
        want = oracles.bigru(x.tolist(), gru_dict(p.forward), gru_dict(p.backward))
        worst = max(worst, float(np.abs(got - np.array(want)).max()))
        # the same sequences padded inside a batch must give the same annotations
        xb = np.zeros((2, T + 2, d))
        xb[0, :T] = x
        mask = np.zeros((2, T + 2), bool)
        mask[0, :T] = True
        mask[1, :] = True
        got_b = bigru_forward(xb, p, mask).data[0, :T]
        worst = max(worst, float(np.abs(got_b - np.array(want)).max()))
    return worst


def sweep_hierarchical(n_instances=50, seed=0):
    import numpy as np

    import oracles
    from rdbridge.attention import HierAttnParams, hierarchical_attention

    worst = 0.0
    for k in range(n_instances):
        rng = np.random.default_rng((seed, k, 2))
        d, H = int(rng.integers(1, 5)), int(rng.integers(1, 4))
        p = randomize(HierAttnParams.init(rng, d, H), rng, 0.7)
        n_caps = int(rng.integers(1, 4))
        lengths = [[int(v) for v in rng.integers(1, 4, size=int(rng.integers(1, 4)))] for _ in range(n_caps)]
        T = max(sum(ls) for ls in lengths)
        tokens = rng.normal(size=(n_caps, T, d))
        got = hierarchical_attention(tokens, lengths, p).data
        ref = hier_dict(p)
        for j, ls in enumerate(lengths):
            want = oracles.hierarchical(tokens[j, :sum(ls)].tolist(), ls, ref)
            worst = max(worst, float(np.abs(got[j] - np.array(want)).max()))
            single = hierarchical_attention(tokens[j, :sum(ls)], ls, p).data
            worst = max(worst, float(np.abs(single - np.array(want)).max()))
    return worst


def sweep_similarity(n_instances=50, seed=0):
    import numpy as np

    import oracles
    from rdbridge.retrieval import similarity_matrix

    worst = 0.0
    for k in range(n_instances):
        rng = np.random.default_rng((seed, k, 3))
        N, M, d = (int(v) for v in rng.integers(1, 7, size=3))
        a, b = rng.normal(size=(N, d)), rng.normal(size=(M, d))
        got = similarity_matrix(a, b).data
        worst = max(worst, float(np.abs(got - np.array(oracles.similarity(a.tolist(), b.tolist()))).max()))
    return worst


def sweep_recall(n_instances=50, seed=0):
    """Random 6x30 matrices, 5 captions per image, deliberately rounded to create ties."""
    import numpy as np

    import oracles
    from rdbridge.retrieval import recall_at_k

    worst = 0.0
    for k in range(n_instances):
        rng = np.random.default_rng((seed, k, 4))
        S = np.round(rng.normal(size=(6, 30)), 1)
        cap_img = rng.permutation(np.repeat(np.arange(6), 5))
        for kk in (1, 5, 10):
            for direction in ("i2t", "t2i"):
                if direction == "t2i" and kk > 6:
                    continue
                got = recall_at_k(S, cap_img, kk, direction)
                want = oracles.recall(S.tolist(), cap_img.tolist(), kk, direction)
                worst = max(worst, abs(got - want))
    return worst
