"""Paired image/caption feature datasets and their text file format.

File layout (UTF-8, one record per line, fields separated by spaces)::

    RDBFEAT v1 <n_images> <n_captions> <d_model> <n_classes>
    IMG <id> <label> <T> <T*d_model floats>
    ...
    CAP <id> <img_id> <S> <T_1> ... <T_S> <(T_1+...+T_S)*d_model floats>
    ...

Token vectors are row-major. Blank lines and lines starting with ``#`` are
ignored. Floats are written with ``repr`` so a round trip is exact.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ContractError, ParseError

MAGIC = "RDBFEAT"
VERSION = "v1"


@dataclass
class PairedDataset:
    """Images with token features, captions grouped into sentences, class labels.

    Every caption belongs to exactly one image; every image has at least one
    caption. ``caption_image`` stores image *ids*, not positions.
    """

    image_ids: np.ndarray
    labels: np.ndarray
    image_tokens: list
    caption_ids: np.ndarray
    caption_image: np.ndarray
    caption_sentences: list
    caption_tokens: list
    n_classes: int
    d_model: int
    _image_pos: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.image_ids = np.asarray(self.image_ids, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.caption_ids = np.asarray(self.caption_ids, dtype=np.int64)
        self.caption_image = np.asarray(self.caption_image, dtype=np.int64)
        self.caption_sentences = [tuple(int(n) for n in s) for s in self.caption_sentences]
        self.image_tokens = [np.asarray(t, dtype=np.float64) for t in self.image_tokens]
        self.caption_tokens = [np.asarray(t, dtype=np.float64) for t in self.caption_tokens]
        self._image_pos = {int(i): k for k, i in enumerate(self.image_ids)}

    @property
    def n_images(self) -> int:
        return len(self.image_ids)

    @property
    def n_captions(self) -> int:
        return len(self.caption_ids)

    def validate(self) -> None:
        """Raise ContractError if any dataset invariant is broken."""
        if len(self._image_pos) != self.n_images:
            raise ContractError("duplicate image ids")
        if len(set(self.caption_ids.tolist())) != self.n_captions:
            raise ContractError("duplicate caption ids")
        if not (len(self.labels) == len(self.image_tokens) == self.n_images):
            raise ContractError("image arrays differ in length")
        if not (len(self.caption_image) == len(self.caption_sentences) == len(self.caption_tokens) == self.n_captions):
            raise ContractError("caption arrays differ in length")
        if self.n_images and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ContractError(f"labels must lie in [0, {self.n_classes})")
        for i, t in zip(self.image_ids, self.image_tokens):
            if t.ndim != 2 or t.shape[0] < 1 or t.shape[1] != self.d_model:
                raise ContractError(f"image {i}: token array has shape {t.shape}")
        for c, img, sents, t in zip(self.caption_ids, self.caption_image, self.caption_sentences, self.caption_tokens):
            if int(img) not in self._image_pos:
                raise ContractError(f"caption {c} refers to missing image id {img}")
            if not sents or min(sents) < 1:
                raise ContractError(f"caption {c} has an empty sentence or no sentences")
            if t.shape != (sum(sents), self.d_model):
                raise ContractError(f"caption {c}: tokens {t.shape} vs sentences {sents}")
        counts = np.bincount(self.caption_image_positions(), minlength=self.n_images)
        if self.n_images and counts.min() == 0:
            missing = self.image_ids[np.argmin(counts)]
            raise ContractError(f"image {missing} has no captions")

    def caption_image_positions(self) -> np.ndarray:
        """Position (not id) of each caption's image."""
        return np.array([self._image_pos[int(i)] for i in self.caption_image], dtype=np.int64)

    def caption_positions_of(self) -> list[np.ndarray]:
        pos = self.caption_image_positions()
        return [np.flatnonzero(pos == k) for k in range(self.n_images)]

    def caption_labels(self) -> np.ndarray:
        """Each caption inherits the label of its image."""
        return self.labels[self.caption_image_positions()] if self.n_captions else np.zeros(0, dtype=np.int64)

    def subset(self, image_positions) -> PairedDataset:
        """Images at ``image_positions`` together with all of their captions."""
        image_positions = np.asarray(image_positions, dtype=np.int64)
        keep_ids = set(self.image_ids[image_positions].tolist())
        caps = [j for j, img in enumerate(self.caption_image) if int(img) in keep_ids]
        return PairedDataset(
            image_ids=self.image_ids[image_positions],
            labels=self.labels[image_positions],
            image_tokens=[self.image_tokens[k] for k in image_positions],
            caption_ids=self.caption_ids[caps],
            caption_image=self.caption_image[caps],
            caption_sentences=[self.caption_sentences[j] for j in caps],
            caption_tokens=[self.caption_tokens[j] for j in caps],
            n_classes=self.n_classes,
            d_model=self.d_model,
        )

    def equals(self, other: PairedDataset) -> bool:
        """Field-by-field equality (exact for floats)."""
        return (
            self.n_classes == other.n_classes and self.d_model == other.d_model
            and np.array_equal(self.image_ids, other.image_ids)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.caption_ids, other.caption_ids)
            and np.array_equal(self.caption_image, other.caption_image)
            and self.caption_sentences == other.caption_sentences
            and len(self.image_tokens) == len(other.image_tokens)
            and all(np.array_equal(a, b) for a, b in zip(self.image_tokens, other.image_tokens))
            and len(self.caption_tokens) == len(other.caption_tokens)
            and all(np.array_equal(a, b) for a, b in zip(self.caption_tokens, other.caption_tokens))
        )


def pad_tokens(arrays: list, dtype=np.float64) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad ``[T_i, d]`` arrays into ``[N, T_max, d]`` plus a boolean mask."""
    if not arrays:
        raise ContractError("nothing to pad")
    T = max(a.shape[0] for a in arrays)
    d = arrays[0].shape[1]
    out = np.zeros((len(arrays), T, d), dtype=dtype)
    mask = np.zeros((len(arrays), T), dtype=bool)
    for i, a in enumerate(arrays):
        out[i, :a.shape[0]] = a
        mask[i, :a.shape[0]] = True
    return out, mask


def _fmt(values: np.ndarray) -> str:
    return " ".join(map(repr, np.asarray(values, dtype=np.float64).reshape(-1).tolist()))


def save_features(ds: PairedDataset, path) -> None:
    """Write ``ds`` in the RDBFEAT v1 text format."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{MAGIC} {VERSION} {ds.n_images} {ds.n_captions} {ds.d_model} {ds.n_classes}\n")
        for i, lab, tok in zip(ds.image_ids, ds.labels, ds.image_tokens):
            fh.write(f"IMG {int(i)} {int(lab)} {tok.shape[0]} {_fmt(tok)}\n")
        for c, img, sents, tok in zip(ds.caption_ids, ds.caption_image, ds.caption_sentences, ds.caption_tokens):
            lens = " ".join(str(n) for n in sents)
            fh.write(f"CAP {int(c)} {int(img)} {len(sents)} {lens} {_fmt(tok)}\n")


def _ints(fields: list[str], lineno: int, what: str) -> list[int]:
    try:
        return [int(f) for f in fields]
    except ValueError:
        raise ParseError(f"expected integer {what}, got {' '.join(fields)!r}", lineno) from None


def _floats(fields: list[str], lineno: int) -> np.ndarray:
    try:
        return np.array([float(f) for f in fields], dtype=np.float64)
    except ValueError as exc:
        raise ParseError(f"bad float value ({exc})", lineno) from None


def load_features(path: str | os.PathLike) -> PairedDataset:
    """Parse and validate an RDBFEAT v1 file.

    Raises:
        ParseError: with the offending 1-based line number for malformed
            headers, records, counts or dangling caption references.
    """
    header = None
    images: dict[int, tuple[int, np.ndarray, int]] = {}
    captions: list[tuple[int, int, tuple, np.ndarray, int]] = []
    lineno = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if header is None:
                if len(parts) != 6 or parts[0] != MAGIC:
                    raise ParseError(f"expected header '{MAGIC} {VERSION} <n_images> <n_captions> <d_model> <n_classes>'", lineno)
                if parts[1] != VERSION:
                    raise ParseError(f"unsupported version {parts[1]!r}", lineno)
                n_img, n_cap, d, n_cls = _ints(parts[2:], lineno, "header field")
                if d < 1 or n_cls < 1 or n_img < 0 or n_cap < 0:
                    raise ParseError("header sizes must be positive", lineno)
                header = (n_img, n_cap, d, n_cls, lineno)
                continue
            n_img, n_cap, d, n_cls, _ = header
            kind = parts[0]
            if kind == "IMG":
                if len(parts) < 4:
                    raise ParseError("IMG record needs <id> <label> <T> <values>", lineno)
                img_id, label, T = _ints(parts[1:4], lineno, "IMG field")
                if img_id in images:
                    raise ParseError(f"duplicate image id {img_id}", lineno)
                if not 0 <= label < n_cls:
                    raise ParseError(f"image {img_id}: label {label} outside [0, {n_cls})", lineno)
                if T < 1:
                    raise ParseError(f"image {img_id}: token count must be >= 1", lineno)
                vals = parts[4:]
                if len(vals) != T * d:
                    raise ParseError(f"image {img_id}: expected {T * d} values ({T} tokens x {d}), got {len(vals)}", lineno)
                images[img_id] = (label, _floats(vals, lineno).reshape(T, d), lineno)
            elif kind == "CAP":
                if len(parts) < 4:
                    raise ParseError("CAP record needs <id> <img_id> <S> <T_1..T_S> <values>", lineno)
                cap_id, img_id, S = _ints(parts[1:4], lineno, "CAP field")
                if S < 1:
                    raise ParseError(f"caption {cap_id}: needs at least one sentence", lineno)
                if len(parts) < 4 + S:
                    raise ParseError(f"caption {cap_id}: missing sentence lengths", lineno)
                lens = tuple(_ints(parts[4:4 + S], lineno, "sentence length"))
                if min(lens) < 1:
                    raise ParseError(f"caption {cap_id}: empty sentence", lineno)
                vals = parts[4 + S:]
                T = sum(lens)
                if len(vals) != T * d:
                    raise ParseError(f"caption {cap_id}: expected {T * d} values ({T} tokens x {d}), got {len(vals)}", lineno)
                captions.append((cap_id, img_id, lens, _floats(vals, lineno).reshape(T, d), lineno))
            else:
                raise ParseError(f"unknown record type {kind!r}", lineno)
    if header is None:
        raise ParseError("empty file: missing header", max(lineno, 1))
    n_img, n_cap, d, n_cls, hline = header
    if len(images) != n_img:
        raise ParseError(f"header announces {n_img} images, found {len(images)}", hline)
    if len(captions) != n_cap:
        raise ParseError(f"header announces {n_cap} captions, found {len(captions)}", hline)
    seen_caps: set[int] = set()
    with_caption: set[int] = set()
    for cap_id, img_id, _, _, ln in captions:
        if cap_id in seen_caps:
            raise ParseError(f"duplicate caption id {cap_id}", ln)
        seen_caps.add(cap_id)
        if img_id not in images:
            raise ParseError(f"caption {cap_id} refers to missing image id {img_id}", ln)
        with_caption.add(img_id)
    for img_id, (_, _, ln) in images.items():
        if img_id not in with_caption:
            raise ParseError(f"image {img_id} has no captions", ln)
    ids = list(images)
    ds = PairedDataset(
        image_ids=ids,
        labels=[images[i][0] for i in ids],
        image_tokens=[images[i][1] for i in ids],
        caption_ids=[c[0] for c in captions],
        caption_image=[c[1] for c in captions],
        caption_sentences=[c[2] for c in captions],
        caption_tokens=[c[3] for c in captions],
        n_classes=n_cls,
        d_model=d,
    )
    ds.validate()
    return ds
