"""Synthetic paired datasets with class structure and per-image identity."""
from __future__ import annotations

import numpy as np

from ..data import PairedDataset


def _split_lengths(rng: np.random.Generator, total: int, parts: int) -> tuple[int, ...]:
    cuts = np.sort(rng.choice(np.arange(1, total), size=parts - 1, replace=False)) if parts > 1 else np.array([], int)
    edges = np.concatenate([[0], cuts, [total]])
    return tuple(int(n) for n in np.diff(edges))


def generate_synthetic(n_classes: int = 8, pairs_per_class: int = 64, d_model: int = 96,
                       tokens_per_modality: int | tuple[int, int] = (4, 6), noise_scale: float = 0.05,
                       seed: int = 0, instance_scale: float = 0.5, max_captions: int = 5,
                       max_sentences: int = 3) -> PairedDataset:
    """Draw a dataset of ``n_classes * pairs_per_class`` images.

    Each class has a Gaussian prototype. Each image draws its own latent
    ``z = prototype + instance_scale * N(0, I)``; its patch tokens are
    ``z + noise_scale * N(0, I)``. Captions (1 to ``max_captions`` per image,
    uniform) have tokens ``A z + noise_scale * N(0, I)`` for one fixed random
    rotation ``A``, split into 1 to ``max_sentences`` pseudo-sentences.

    Args:
        tokens_per_modality: ``(image_tokens, caption_tokens)`` or one int for both.
    """
    if isinstance(tokens_per_modality, int):
        n_patch = n_tok = tokens_per_modality
    else:
        n_patch, n_tok = tokens_per_modality
    if min(n_classes, pairs_per_class, d_model, n_patch, n_tok) < 1:
        raise ValueError("all sizes must be positive")
    rng = np.random.default_rng(seed)
    prototypes = rng.normal(size=(n_classes, d_model))
    rotation, _ = np.linalg.qr(rng.normal(size=(d_model, d_model)))

    image_tokens, labels = [], []
    cap_img, cap_sents, cap_tokens = [], [], []
    img_id = 0
    for c in range(n_classes):
        for _ in range(pairs_per_class):
            z = prototypes[c] + instance_scale * rng.normal(size=d_model)
            image_tokens.append(z + noise_scale * rng.normal(size=(n_patch, d_model)))
            labels.append(c)
            tz = rotation @ z
            for _ in range(int(rng.integers(1, max_captions + 1))):
                n_s = int(rng.integers(1, min(max_sentences, n_tok) + 1))
                cap_sents.append(_split_lengths(rng, n_tok, n_s))
                cap_tokens.append(tz + noise_scale * rng.normal(size=(n_tok, d_model)))
                cap_img.append(img_id)
            img_id += 1
    ds = PairedDataset(
        image_ids=np.arange(img_id),
        labels=labels,
        image_tokens=image_tokens,
        caption_ids=np.arange(len(cap_img)),
        caption_image=cap_img,
        caption_sentences=cap_sents,
        caption_tokens=cap_tokens,
        n_classes=n_classes,
        d_model=d_model,
    )
    ds.validate()
    return ds
