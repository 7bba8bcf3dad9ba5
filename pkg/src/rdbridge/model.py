"""The full dual-tower model: frozen stubs, adapters, projection and class heads."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .attention import SentenceLayout
from .cmaa import EVAL, CmaaBlockParams, ForwardContext, InsertionPlan, adapt_image_tower, adapt_text_tower
from .data import PairedDataset, pad_tokens
from .dtcl import classification_loss, consistency_loss, cross_modal_loss, total_loss
from .encoders import ProjectionHead, StubEncoder, project_common
from .numerics import Tensor, matmul
from .params import count_parameters, frozen_copy, named_tensors, param, zeros


@dataclass
class ClassifierHead:
    W: Tensor
    b: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, n_classes: int) -> ClassifierHead:
        return cls(param(rng, (d_in, n_classes)), zeros((n_classes,)))

    def __call__(self, x) -> Tensor:
        return matmul(x, self.W) + self.b


@dataclass
class TextSide:
    """Trainable parameters on the text path; this is what the EMA teacher mirrors."""

    tsa: list
    shared: list
    head: ProjectionHead


@dataclass
class Batch:
    image_tokens: np.ndarray
    image_mask: np.ndarray
    text_tokens: np.ndarray
    text_mask: np.ndarray
    layout: SentenceLayout
    labels: np.ndarray
    groups: np.ndarray

    @classmethod
    def from_pairs(cls, ds: PairedDataset, caption_positions, dtype=np.float64) -> Batch:
        """One row per caption, paired with its image."""
        caption_positions = np.asarray(caption_positions, dtype=np.int64)
        img_pos = ds.caption_image_positions()[caption_positions]
        it, im = pad_tokens([ds.image_tokens[k] for k in img_pos], dtype)
        tt, tm = pad_tokens([ds.caption_tokens[j] for j in caption_positions], dtype)
        layout = SentenceLayout.build([ds.caption_sentences[j] for j in caption_positions], max_tokens=tt.shape[1])
        return cls(it, im, tt, tm, layout, ds.labels[img_pos], ds.image_ids[img_pos])


@dataclass
class LossTerms:
    cross: Tensor | None
    cls: Tensor | None
    consist: Tensor | None
    total: Tensor

    def as_floats(self) -> dict:
        out = {"total": self.total.item()}
        for name in ("cross", "cls", "consist"):
            t = getattr(self, name)
            if t is not None:
                out[name] = t.item()
        return out


@dataclass
class RDBModel:
    image_encoder: StubEncoder
    text_encoder: StubEncoder
    plan: InsertionPlan
    blocks: list
    image_head: ProjectionHead
    text_head: ProjectionHead
    image_cls: ClassifierHead
    text_cls: ClassifierHead
    sigma: list
    teacher: TextSide
    pooling: str = "mean"
    margin: float = 0.2
    hardest_negative: bool = False
    loss_mask: tuple = (True, True, True)

    @classmethod
    def build(cls, config, d_model: int, n_classes: int) -> RDBModel:
        """Fresh model for ``config``; adapters start as exact no-ops."""
        img_enc = StubEncoder.build(d_model, config.n_blocks, seed=config.encoder_seed, ffn_mult=config.ffn_mult)
        txt_enc = StubEncoder.build(d_model, config.n_blocks, seed=config.encoder_seed + 1, ffn_mult=config.ffn_mult)
        if config.cmaa_enabled:
            plan = InsertionPlan.parse(config.insertion_plan, config.n_blocks)
            plan.validate(config.n_blocks)
        else:
            plan = InsertionPlan([])
        rng = np.random.default_rng(config.seed)
        blocks = [CmaaBlockParams.init(rng, d_model, config.d_bottleneck, config.lambda_init) for _ in plan.after_blocks]
        text_head = ProjectionHead.init(rng, d_model, config.d_common)
        model = cls(
            image_encoder=img_enc, text_encoder=txt_enc, plan=plan, blocks=blocks,
            image_head=ProjectionHead.init(rng, d_model, config.d_common),
            text_head=text_head,
            image_cls=ClassifierHead.init(rng, config.d_common, n_classes),
            text_cls=ClassifierHead.init(rng, config.d_common, n_classes),
            sigma=[Tensor(np.array(1.0), requires_grad=True) for _ in range(3)],
            teacher=None, pooling=config.pooling, margin=config.margin,
            hardest_negative=config.hardest_negative, loss_mask=tuple(config.loss_mask),
        )
        model.teacher = frozen_copy(model.text_side())
        return model

    @property
    def d_model(self) -> int:
        return self.image_encoder.d_model

    def text_side(self) -> TextSide:
        return TextSide([b.tsa for b in self.blocks], [b.shared for b in self.blocks], self.text_head)

    # -- parameter bookkeeping --------------------------------------------------
    def trainable(self) -> dict[str, Tensor]:
        """Parameters the optimizer updates under the current loss mask."""
        out: dict[str, Tensor] = {}
        out.update(named_tensors(self.blocks, "blocks"))
        out.update(named_tensors(self.image_head, "image_head"))
        out.update(named_tensors(self.text_head, "text_head"))
        if self.loss_mask[1]:
            out.update(named_tensors(self.image_cls, "image_cls"))
            out.update(named_tensors(self.text_cls, "text_cls"))
        if sum(self.loss_mask) >= 2:
            for i, on in enumerate(self.loss_mask):
                if on:
                    out[f"sigma.{i}"] = self.sigma[i]
        return out

    def state_tensors(self) -> dict[str, Tensor]:
        """Every non-frozen tensor, trainable under this mask or not."""
        out: dict[str, Tensor] = {}
        for name in ("blocks", "image_head", "text_head", "image_cls", "text_cls", "sigma"):
            out.update(named_tensors(getattr(self, name), name))
        return out

    def teacher_tensors(self) -> dict[str, Tensor]:
        return dict(named_tensors(self.teacher, "teacher"))

    def parameter_counts(self) -> tuple[int, int]:
        """``(trainable, total)`` scalar counts; total includes the frozen towers."""
        trainable = sum(t.size for t in self.trainable().values())
        frozen = count_parameters(self.image_encoder.blocks) + count_parameters(self.text_encoder.blocks)
        return int(trainable), int(trainable + frozen)

    # -- forward --------------------------------------------------------------------
    def embed_images(self, tokens, mask, ctx: ForwardContext = EVAL) -> Tensor:
        h = adapt_image_tower(Tensor(tokens), mask, self.image_encoder, self.blocks, self.plan, ctx)
        return project_common(h, self.image_head, mask, self.pooling)

    def embed_texts(self, tokens, mask, layout, ctx: ForwardContext = EVAL,
                    text_side: TextSide | None = None) -> Tensor:
        side = self.text_side() if text_side is None else text_side
        blocks = [dataclasses.replace(b, tsa=tsa, shared=sh) for b, tsa, sh in zip(self.blocks, side.tsa, side.shared)]
        h = adapt_text_tower(Tensor(tokens), mask, layout, self.text_encoder, blocks, self.plan, ctx)
        return project_common(h, side.head, mask, self.pooling)

    def losses(self, batch: Batch, ctx: ForwardContext = EVAL) -> LossTerms:
        """Forward both towers and the enabled loss terms.

        With a single enabled term the uncertainty weighting is bypassed.
        """
        img = self.embed_images(batch.image_tokens, batch.image_mask, ctx)
        txt = self.embed_texts(batch.text_tokens, batch.text_mask, batch.layout, ctx)
        use_cross, use_cls, use_consist = self.loss_mask
        cross = cross_modal_loss(img, txt, self.margin, groups=batch.groups, hardest=self.hardest_negative) if use_cross else None
        cls = classification_loss([self.image_cls(img), self.text_cls(txt)], batch.labels) if use_cls else None
        consist = None
        if use_consist:
            target = self.embed_texts(batch.text_tokens, batch.text_mask, batch.layout, EVAL, text_side=self.teacher)
            consist = consistency_loss(img, target)
        terms = [cross, cls, consist]
        enabled = [t for t in terms if t is not None]
        total = enabled[0] if len(enabled) == 1 else total_loss(terms, self.sigma)
        return LossTerms(cross, cls, consist, total)

    def embed_dataset(self, ds: PairedDataset, chunk: int = 256) -> tuple[np.ndarray, np.ndarray]:
        """Eval-mode embeddings of every image and every caption in ``ds``."""
        d = self.image_head.W.shape[1]
        dtype = self.image_head.W.dtype
        imgs = np.zeros((ds.n_images, d), dtype=dtype)
        txts = np.zeros((ds.n_captions, d), dtype=dtype)
        for s in range(0, ds.n_images, chunk):
            tok, m = pad_tokens(ds.image_tokens[s:s + chunk], dtype)
            imgs[s:s + chunk] = self.embed_images(tok, m).data
        for s in range(0, ds.n_captions, chunk):
            tok, m = pad_tokens(ds.caption_tokens[s:s + chunk], dtype)
            layout = SentenceLayout.build(ds.caption_sentences[s:s + chunk], max_tokens=tok.shape[1])
            txts[s:s + chunk] = self.embed_texts(tok, m, layout).data
        return imgs, txts
