"""Cross-modal asymmetric adapters.

Image path (VEA): down-project, GELU, differential attention, shared layer,
gate, up-project. Text path (TSA): down-project, GELU, hierarchical
attention broadcast back onto the tokens, shared layer, up-project. Both
up-projections start at zero, so a freshly built adapter is a no-op under
the residual connection.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .attention import DiffAttnParams, HierAttnParams, SentenceLayout, diff_attention, hierarchical_attention
from .encoders import stub_block_forward
from .exceptions import ConfigError, ShapeError
from .numerics import Tensor, as_tensor, dropout, gelu, matmul, sigmoid
from .params import param, zeros


@dataclass
class ForwardContext:
    """Mode flags threaded through a forward pass."""

    training: bool = False
    dropout: float = 0.0
    rng: np.random.Generator | None = None

    def drop(self, x: Tensor) -> Tensor:
        return dropout(x, self.dropout, self.training, self.rng)


EVAL = ForwardContext()


@dataclass
class AdapterParams:
    W_down: Tensor
    W_up: Tensor

    def __post_init__(self):
        d_model, d_b = self.W_down.shape
        if self.W_up.shape != (d_b, d_model):
            raise ShapeError(f"W_up must be {(d_b, d_model)}, got {self.W_up.shape}")
        if d_b >= d_model:
            raise ShapeError(f"bottleneck {d_b} must be narrower than d_model {d_model}")

    @classmethod
    def init(cls, rng: np.random.Generator, d_model: int, d_bottleneck: int) -> AdapterParams:
        return cls(param(rng, (d_model, d_bottleneck)), zeros((d_bottleneck, d_model)))


def adapter_forward(E, p: AdapterParams, ctx: ForwardContext = EVAL) -> Tensor:
    """Plain bottleneck adapter: ``GELU(E W_down) W_up``."""
    E = as_tensor(E)
    if E.shape[-1] != p.W_down.shape[0]:
        raise ShapeError(f"adapter: input width {E.shape[-1]} vs W_down {p.W_down.shape}")
    return matmul(ctx.drop(gelu(matmul(E, p.W_down))), p.W_up)


@dataclass
class VEAParams:
    adapter: AdapterParams
    diff: DiffAttnParams
    gate: Tensor  # scalar logit


@dataclass
class TSAParams:
    adapter: AdapterParams
    hier: HierAttnParams


@dataclass
class CmaaBlockParams:
    """One insertion point: image adapter, text adapter and their shared layer."""

    vea: VEAParams
    tsa: TSAParams
    shared: Tensor  # [d_b, d_b], used by both paths

    def __post_init__(self):
        d_b = self.shared.shape[0]
        if self.shared.shape != (d_b, d_b):
            raise ShapeError(f"shared layer must be square, got {self.shared.shape}")
        for name, ad in (("vea", self.vea.adapter), ("tsa", self.tsa.adapter)):
            if ad.W_down.shape[1] != d_b:
                raise ShapeError(f"{name} bottleneck {ad.W_down.shape[1]} != shared width {d_b}")
        if self.tsa.hier.annotation_width != d_b:
            raise ShapeError("hierarchical attention output width must equal the bottleneck width")

    @classmethod
    def init(cls, rng: np.random.Generator, d_model: int, d_bottleneck: int,
             lambda_init: float = 0.8) -> CmaaBlockParams:
        if d_bottleneck % 2:
            raise ConfigError("d_bottleneck must be even (BiGRU annotations are 2H wide)")
        vea = VEAParams(
            adapter=AdapterParams.init(rng, d_model, d_bottleneck),
            diff=DiffAttnParams.init(rng, d_bottleneck, d_bottleneck, lambda_init),
            gate=zeros(()),
        )
        tsa = TSAParams(
            adapter=AdapterParams.init(rng, d_model, d_bottleneck),
            hier=HierAttnParams.init(rng, d_bottleneck, d_bottleneck // 2),
        )
        return cls(vea, tsa, param(rng, (d_bottleneck, d_bottleneck)))


def gate_combine(specific, shared, gate, g_override: float | None = None) -> Tensor:
    """``g * shared + (1 - g) * specific`` with ``g = sigmoid(gate)``."""
    specific, shared = as_tensor(specific), as_tensor(shared)
    if specific.shape != shared.shape:
        raise ShapeError(f"gate_combine: {specific.shape} vs {shared.shape}")
    g = sigmoid(gate) if g_override is None else g_override
    return g * shared + (1.0 - g) * specific


def vea_forward(E_I, block: CmaaBlockParams, mask: np.ndarray | None = None,
                ctx: ForwardContext = EVAL, g_override: float | None = None) -> tuple[Tensor, Tensor]:
    """Image-side adapter. Returns ``(enhanced, shared_input)``.

    ``enhanced`` has the input's shape and is meant to be added residually;
    ``shared_input`` is the differential-attention output fed to the shared layer.
    """
    p = block.vea
    h = ctx.drop(gelu(matmul(as_tensor(E_I), p.adapter.W_down)))
    specific = diff_attention(h, p.diff, mask=mask)
    shared = matmul(specific, block.shared)
    mixed = gate_combine(specific, shared, p.gate, g_override)
    return matmul(mixed, p.adapter.W_up), specific


def tsa_forward(E_T, sentence_lengths, block: CmaaBlockParams,
                ctx: ForwardContext = EVAL) -> Tensor:
    """Text-side adapter; the text vector is broadcast-added to every token.

    ``E_T`` is ``[T, d]`` with ``sentence_lengths`` a list of ints, or a padded
    ``[N, T, d]`` batch with one list per caption (or a SentenceLayout).
    """
    E_T = as_tensor(E_T)
    if E_T.shape[-2] < 1:
        raise ShapeError("tsa_forward needs at least one token")
    p = block.tsa
    h = ctx.drop(gelu(matmul(E_T, p.adapter.W_down)))
    v = hierarchical_attention(h, sentence_lengths, p.hier)
    ctx_vec = v.reshape(v.shape[:-1] + (1, v.shape[-1]))
    return matmul(matmul(h + ctx_vec, block.shared), p.adapter.W_up)


@dataclass
class InsertionPlan:
    """Frozen-block indices (0-based) after which a CMAA block is applied."""

    after_blocks: list[int] = field(default_factory=list)

    @classmethod
    def every_block(cls, n_blocks: int) -> InsertionPlan:
        return cls(list(range(n_blocks)))

    @classmethod
    def parse(cls, text: str, n_blocks: int) -> InsertionPlan:
        text = text.strip().lower()
        if text in ("all", "every", ""):
            return cls.every_block(n_blocks)
        if text == "none":
            return cls([])
        return cls([int(t) for t in text.replace(",", " ").split()])

    def validate(self, n_blocks: int) -> None:
        for b in self.after_blocks:
            if not 0 <= b < n_blocks:
                raise ConfigError(f"insertion plan refers to block {b}, encoder has {n_blocks}")
        if len(set(self.after_blocks)) != len(self.after_blocks):
            raise ConfigError(f"insertion plan repeats a block: {self.after_blocks}")

    def __str__(self) -> str:
        return ",".join(map(str, self.after_blocks)) if self.after_blocks else "none"


def cmaa_apply(image_x, image_mask, text_x, text_mask, layout: SentenceLayout | Sequence,
               image_encoder, text_encoder, blocks: Sequence[CmaaBlockParams],
               plan: InsertionPlan, ctx: ForwardContext = EVAL,
               text_blocks: Sequence[CmaaBlockParams] | None = None) -> tuple[Tensor, Tensor]:
    """Run both frozen towers, adding adapter outputs after the planned blocks.

    ``blocks[i]`` serves ``plan.after_blocks[i]``. ``text_blocks`` optionally
    supplies different text-side parameters (used by the EMA teacher).
    Either tower may be skipped by passing ``None`` as its input.
    """
    img = None if image_x is None else adapt_image_tower(image_x, image_mask, image_encoder, blocks, plan, ctx)
    txt = None if text_x is None else adapt_text_tower(
        text_x, text_mask, layout, text_encoder, text_blocks if text_blocks is not None else blocks, plan, ctx)
    return img, txt


def _plan_map(plan: InsertionPlan, blocks: Sequence, n_blocks: int) -> dict[int, object]:
    plan.validate(n_blocks)
    if len(blocks) != len(plan.after_blocks):
        raise ConfigError(f"{len(blocks)} adapter blocks for {len(plan.after_blocks)} insertion points")
    return dict(zip(plan.after_blocks, blocks))


def adapt_image_tower(x, mask, encoder, blocks, plan: InsertionPlan, ctx: ForwardContext = EVAL) -> Tensor:
    where = _plan_map(plan, blocks, len(encoder.blocks))
    h = as_tensor(x)
    for i, bp in enumerate(encoder.blocks):
        h = stub_block_forward(h, bp, mask)
        if i in where:
            h = h + vea_forward(h, where[i], mask, ctx)[0]
    return h


def adapt_text_tower(x, mask, layout, encoder, blocks, plan: InsertionPlan, ctx: ForwardContext = EVAL) -> Tensor:
    where = _plan_map(plan, blocks, len(encoder.blocks))
    h = as_tensor(x)
    for i, bp in enumerate(encoder.blocks):
        h = stub_block_forward(h, bp, mask)
        if i in where:
            h = h + tsa_forward(h, layout, where[i], ctx)
    return h
