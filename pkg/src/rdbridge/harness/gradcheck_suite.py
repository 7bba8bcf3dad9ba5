"""Finite-difference sweep over every differentiable op and the composed loss.

Each case is a builder ``rng -> (f, inputs)`` where ``f(*inputs)`` is a scalar
Tensor. Elementwise ops are reduced to a scalar through a fixed random
weighting so no gradient component is trivially zero.

Differences use the fourth-order central stencil with ``eps = 1e-3``: the
plain two-point rule at ``1e-5`` loses ~1e-10 to round-off, which is large
next to the smallest gradient components of the GRU paths.

Kinks (``relu`` at 0, hinge terms at the margin) are excluded by construction:
inputs are nudged away from the kink until every kink argument is at least
``KINK_GAP`` from zero. The gap must exceed the stencil's reach (``2 * FD_EPS``)
or the outer samples can straddle the kink.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..attention import BiGRUParams, DiffAttnParams, HierAttnParams, SentenceLayout, bigru_forward, diff_attention, \
    hierarchical_attention
from ..cmaa import CmaaBlockParams, ForwardContext, gate_combine, tsa_forward, vea_forward
from ..dtcl import classification_loss, consistency_loss, cross_modal_loss, total_loss
from ..encoders import StubEncoder, project_common, stub_block_forward
from ..numerics import (Tensor, concat, div, dropout, exp_op, finite_diff_check, gelu, get_default_dtype, getitem,
                        l2_normalize, layer_norm, log_op, log_softmax, matmul, maximum0, mean, mul, power, reshape,
                        set_default_dtype, sigmoid, softmax, sqrt_op, stack, sub, take_rows, tanh_op, transpose, tsum)
from ..params import named_tensors

FD_EPS = 1e-3
FD_STENCIL = 4
KINK_GAP = 5 * FD_EPS
Builder = Callable[[np.random.Generator], tuple[Callable[..., Tensor], list[Tensor]]]


def _t(rng, *shape, low=None):
    x = rng.normal(size=shape)
    if low is not None:
        x = np.abs(x) + low
    return Tensor(x, requires_grad=True)


def _weigh(rng, out_shape):
    R = rng.normal(size=out_shape)
    return lambda y: tsum(y * R)


def _unary(op, positive=False, avoid_zero=False):
    def build(rng):
        x = _t(rng, 3, 4, low=0.5 if positive else None)
        if avoid_zero:
            d = x.data
            d[np.abs(d) < KINK_GAP] += 4 * KINK_GAP
        w = _weigh(rng, (3, 4))
        return (lambda a: w(op(a))), [x]
    return build


def _binary(op, positive_b=False):
    def build(rng):
        a = _t(rng, 3, 4)
        b = _t(rng, 4, low=0.5 if positive_b else None)  # broadcast
        w = _weigh(rng, (3, 4))
        return (lambda x, y: w(op(x, y))), [a, b]
    return build


def _case_matmul(rng):
    a, b = _t(rng, 2, 3, 4), _t(rng, 4, 5)
    w = _weigh(rng, (2, 3, 5))
    return (lambda x, y: w(matmul(x, y))), [a, b]


def _case_shape_ops(rng):
    a, b = _t(rng, 3, 4), _t(rng, 3, 2)
    w1, w2, w3 = _weigh(rng, (4, 3)), _weigh(rng, (2, 6)), _weigh(rng, (3, 6))
    idx = np.array([2, 0, 2, 1])
    w4, w5 = _weigh(rng, (4, 4)), _weigh(rng, (2, 3, 4))

    def f(x, y):
        return (w1(transpose(x)) + w2(reshape(x, (2, 6))) + w3(concat([x, y], axis=-1))
                + w4(take_rows(x, idx)) + w5(stack([x, x * 2.0], axis=0)) + tsum(getitem(x, (slice(1, 3), 2))))
    return f, [a, b]


def _case_reductions(rng):
    a = _t(rng, 3, 4)
    w1, w2 = _weigh(rng, (4,)), _weigh(rng, (3, 1))
    return (lambda x: w1(tsum(x, axis=0)) + w2(mean(x, axis=1, keepdims=True)) + mean(x)), [a]


def _case_softmax(rng):
    a = _t(rng, 2, 3, 5)
    mask = rng.random((2, 3, 5)) > 0.3
    mask[..., 0] = True
    w1, w2, w3 = _weigh(rng, (2, 3, 5)), _weigh(rng, (2, 3, 5)), _weigh(rng, (2, 3, 5))
    return (lambda x: w1(softmax(x, axis=-1)) + w2(softmax(x, axis=-1, mask=mask)) + w3(log_softmax(x))), [a]


def _case_layer_norm(rng):
    x, g, b = _t(rng, 3, 6), _t(rng, 6), _t(rng, 6)
    w = _weigh(rng, (3, 6))
    return (lambda a, gg, bb: w(layer_norm(a, gg, bb))), [x, g, b]


def _case_l2_normalize(rng):
    x = _t(rng, 3, 5)
    w = _weigh(rng, (3, 5))
    return (lambda a: w(l2_normalize(a, axis=-1))), [x]


def _case_dropout(rng):
    x = _t(rng, 4, 6)
    w = _weigh(rng, (4, 6))
    seed = int(rng.integers(1 << 30))
    return (lambda a: w(dropout(a, 0.3, True, np.random.default_rng(seed)))), [x]


def _params(obj, prefix):
    return [t for _, t in named_tensors(obj, prefix)]


def _bind(tensors, fn):
    """Treat ``tensors`` (already wired into ``fn``'s closure) as the inputs."""
    return (lambda *_: fn()), tensors


def _case_diff_attention(rng):
    p = DiffAttnParams.init(rng, 6, 4, 0.8)
    for lam in (p.lambda_q1, p.lambda_k1, p.lambda_q2, p.lambda_k2):
        lam.data[...] = rng.normal(size=lam.shape) * 0.5
    E = _t(rng, 2, 5, 6)
    mask = np.ones((2, 5), bool)
    mask[1, 3:] = False
    w = _weigh(rng, (2, 5, 4))
    return _bind([E] + _params(p, "p"), lambda: w(diff_attention(E, p, mask=mask)))


def _case_bigru(rng):
    p = BiGRUParams.init(rng, 4, 3)
    for t in _params(p, "p"):
        t.data[...] = rng.normal(size=t.shape) * 0.6
    x = _t(rng, 3, 5, 4)
    mask = np.ones((3, 5), bool)
    mask[1, 4:] = False
    mask[2, 2:] = False
    w = _weigh(rng, (3, 5, 6))
    return _bind([x] + _params(p, "p"), lambda: w(bigru_forward(x, p, mask) * mask[..., None]))


def _case_hierarchical(rng):
    p = HierAttnParams.init(rng, 4, 3)
    for t in _params(p, "p"):
        t.data[...] = rng.normal(size=t.shape) * 0.6
    lengths = [[2, 3], [4], [1, 1, 2]]
    x = _t(rng, 3, 5, 4)
    layout = SentenceLayout.build(lengths, max_tokens=5)
    w = _weigh(rng, (3, 6))
    return _bind([x] + _params(p, "p"), lambda: w(hierarchical_attention(x, layout, p)))


def _random_block(rng, d_model=8, d_b=4):
    block = CmaaBlockParams.init(rng, d_model, d_b, 0.8)
    for t in _params(block, "b"):
        t.data[...] = rng.normal(size=t.shape) * 0.5
    return block


def _case_vea(rng):
    block = _random_block(rng)
    x = _t(rng, 2, 4, 8)
    mask = np.array([[1, 1, 1, 1], [1, 1, 1, 0]], bool)
    w = _weigh(rng, (2, 4, 8))
    inputs = [x] + _params(block.vea, "v") + _params(block.shared, "s")
    return _bind(inputs, lambda: w(vea_forward(x, block, mask)[0]))


def _case_tsa(rng):
    block = _random_block(rng)
    x = _t(rng, 2, 5, 8)
    layout = SentenceLayout.build([[2, 3], [1, 2]], max_tokens=5)
    w = _weigh(rng, (2, 5, 8))
    inputs = [x] + _params(block.tsa, "t") + _params(block.shared, "s")
    return _bind(inputs, lambda: w(tsa_forward(x, layout, block)))


def _case_gate(rng):
    a, b, g = _t(rng, 3, 4), _t(rng, 3, 4), _t(rng)
    w = _weigh(rng, (3, 4))
    return (lambda x, y, z: w(gate_combine(x, y, z))), [a, b, g]


def _case_stub_block(rng):
    enc = StubEncoder.build(8, 1, seed=int(rng.integers(1 << 30)))
    bp = enc.blocks[0]
    tensors = _params(bp, "b")
    for t in tensors:
        t.requires_grad = True
    x = _t(rng, 2, 4, 8)
    mask = np.array([[1, 1, 1, 1], [1, 1, 0, 0]], bool)
    w = _weigh(rng, (2, 4, 8))
    return _bind([x] + tensors, lambda: w(stub_block_forward(x, bp, mask)))


def _separated_embeddings(rng, n, d, margin, groups=None):
    """Embeddings whose hinge arguments all sit at least KINK_GAP from zero."""
    while True:
        img, txt = rng.normal(size=(n, d)), rng.normal(size=(n, d))
        a = img / np.linalg.norm(img, axis=1, keepdims=True)
        b = txt / np.linalg.norm(txt, axis=1, keepdims=True)
        S = a @ b.T
        pos = np.diag(S)
        args = np.concatenate([(margin - pos[:, None] + S).ravel(), (margin - pos[None, :] + S).ravel()])
        off = np.ones((n, n), bool) if groups is None else groups[:, None] != groups[None, :]
        np.fill_diagonal(off, False)
        if np.all(np.abs(args[np.concatenate([off.ravel(), off.ravel()])]) > KINK_GAP):
            return Tensor(img, requires_grad=True), Tensor(txt, requires_grad=True)


def _case_cross_modal(rng):
    groups = np.array([0, 0, 1, 2, 3])
    img, txt = _separated_embeddings(rng, 5, 6, 0.2, groups)
    return (lambda a, b: cross_modal_loss(a, b, 0.2, groups=groups)), [img, txt]


def _case_classification(rng):
    la, lb = _t(rng, 4, 3), _t(rng, 4, 3)
    y = rng.integers(0, 3, size=4)
    return (lambda a, b: classification_loss([a, b], y)), [la, lb]


def _case_consistency(rng):
    a, b = _t(rng, 4, 5), Tensor(rng.normal(size=(4, 5)))
    return (lambda x: consistency_loss(x, b)), [a]


def _case_total(rng):
    terms = [_t(rng, low=0.1) for _ in range(3)]
    sig = [_t(rng, low=0.3) for _ in range(3)]
    return (lambda *xs: total_loss(list(xs[:3]), list(xs[3:]))), terms + sig


def _case_end_to_end(rng):
    """Full composed loss (all three terms) at d_model = 8 on a random batch."""
    from ..model import Batch, RDBModel
    from .config import TrainConfig
    from .synthetic import generate_synthetic

    ds = generate_synthetic(n_classes=3, pairs_per_class=3, d_model=8, tokens_per_modality=(3, 4),
                            seed=int(rng.integers(1 << 30)))
    cfg = TrainConfig.desk(d_common=6, d_bottleneck=4, n_blocks=2, encoder_seed=int(rng.integers(1 << 30)))
    model = RDBModel.build(cfg, ds.d_model, ds.n_classes)
    for t in model.state_tensors().values():
        if t.ndim:
            t.data[...] = rng.normal(size=t.shape) * 0.4
    for t in model.teacher_tensors().values():
        t.data[...] = t.data + rng.normal(size=t.shape) * 0.05
    idx = rng.choice(ds.n_captions, size=5, replace=False)
    batch = Batch.from_pairs(ds, idx)
    params = list(model.trainable().values())
    while True:
        img = model.embed_images(batch.image_tokens, batch.image_mask).data
        txt = model.embed_texts(batch.text_tokens, batch.text_mask, batch.layout).data
        a = img / np.linalg.norm(img, axis=1, keepdims=True)
        b = txt / np.linalg.norm(txt, axis=1, keepdims=True)
        S = a @ b.T
        pos = np.diag(S)
        off = batch.groups[:, None] != batch.groups[None, :]
        args = np.concatenate([(cfg.margin - pos[:, None] + S)[off], (cfg.margin - pos[None, :] + S)[off]])
        if np.all(np.abs(args) > KINK_GAP):
            break
        model.image_head.b.data += rng.normal(size=model.image_head.b.shape) * 0.1
    return _bind(params, lambda: model.losses(batch).total)


CASES: dict[str, Builder] = {
    "add": _binary(lambda a, b: a + b),
    "sub": _binary(sub),
    "mul": _binary(mul),
    "div": _binary(div, positive_b=True),
    "power": _unary(lambda a: power(a, 1.5), positive=True),
    "relu": _unary(maximum0, avoid_zero=True),
    "exp": _unary(exp_op),
    "log": _unary(log_op, positive=True),
    "sqrt": _unary(sqrt_op, positive=True),
    "tanh": _unary(tanh_op),
    "sigmoid": _unary(sigmoid),
    "gelu": _unary(gelu),
    "matmul": _case_matmul,
    "shape_ops": _case_shape_ops,
    "reductions": _case_reductions,
    "softmax": _case_softmax,
    "layer_norm": _case_layer_norm,
    "l2_normalize": _case_l2_normalize,
    "dropout": _case_dropout,
    "diff_attention": _case_diff_attention,
    "bigru": _case_bigru,
    "hierarchical_attention": _case_hierarchical,
    "gate_combine": _case_gate,
    "vea": _case_vea,
    "tsa": _case_tsa,
    "stub_block": _case_stub_block,
    "cross_modal_loss": _case_cross_modal,
    "classification_loss": _case_classification,
    "consistency_loss": _case_consistency,
    "total_loss": _case_total,
    "end_to_end": _case_end_to_end,
}

# Checking every component of the larger cases would dominate the runtime, so
# each seed checks one random component in each of this many random inputs.
_INPUT_BUDGET = {"end_to_end": 3, "vea": 8, "tsa": 6, "hierarchical_attention": 6, "stub_block": 8,
                 "diff_attention": 8, "bigru": 8}


@dataclass
class OpResult:
    name: str
    max_rel_error: float
    seeds: int
    passed: bool


@dataclass
class GradcheckReport:
    results: list[OpResult] = field(default_factory=list)
    tol: float = 1e-5
    elapsed: float = 0.0

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def failures(self) -> list[str]:
        return [r.name for r in self.results if not r.passed]

    def to_text(self) -> str:
        lines = [f"{'PASS' if r.passed else 'FAIL'} {r.name:<24} max_rel_err={r.max_rel_error:.3e} seeds={r.seeds}"
                 for r in self.results]
        lines.append(f"{'PASS' if self.passed else 'FAIL'} overall ({len(self.results)} ops, tol {self.tol:g}, "
                     f"{self.elapsed:.1f}s)")
        return "\n".join(lines)


def check_case(name: str, build: Builder, n_seeds: int = 20, tol: float = 1e-5, seed: int = 0) -> OpResult:
    """Worst relative error of one case over ``n_seeds`` random instances."""
    worst = 0.0
    budget = _INPUT_BUDGET.get(name)
    for s in range(n_seeds):
        rng = np.random.default_rng((seed, s, sum(map(ord, name))))
        f, inputs = build(rng)
        per_input = None
        if budget is not None and len(inputs) > budget:
            inputs = [inputs[i] for i in rng.choice(len(inputs), size=budget, replace=False)]
            per_input = 1
        err = finite_diff_check(f, inputs, eps=FD_EPS, max_components=per_input, rng=rng, stencil=FD_STENCIL)
        worst = max(worst, err)
    return OpResult(name, worst, n_seeds, bool(worst < tol))


def gradcheck_suite(n_seeds: int = 20, tol: float = 1e-5, ops=None, extra_cases: dict | None = None,
                    seed: int = 0) -> GradcheckReport:
    """Run every registered case (or those named in ``ops``) at float64.

    ``extra_cases`` adds builders, e.g. a deliberately broken op to confirm
    that the suite flags it; they always run, even when ``ops`` is given.
    """
    extra = dict(extra_cases or {})
    cases = {**CASES, **extra}
    names = list(cases) if ops is None else list(ops) + [n for n in extra if n not in ops]
    prev = get_default_dtype()
    set_default_dtype(np.float64)
    start = time.perf_counter()
    try:
        results = [check_case(n, cases[n], n_seeds, tol, seed) for n in names]
    finally:
        set_default_dtype(prev)
    return GradcheckReport(results, tol, time.perf_counter() - start)
