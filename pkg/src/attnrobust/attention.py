"""Text-guided, non-class and complementary attention maps.

A map is the per-patch dot product between patch features and a prompt
embedding, laid out on the patch raster, bilinearly resized to the image
size and min-max normalised to [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .encoders import DualEncoder, PromptSet, class_text_embeddings, encode_image, non_class_text_embeddings
from .tensor import Tensor

KINDS = ("class", "non_class", "complementary")
SOURCES = ("original_model", "target_model")
INPUT_KINDS = ("clean", "adversarial")
METHODS = ("tga", "comp_tga")


@dataclass
class AttentionMap:
    """One map (``H×W``) or a batch of maps (``N×H×W``) with provenance tags."""

    grid: Tensor
    class_id: int | np.ndarray
    kind: str = "class"
    source: str = "target_model"
    input_kind: str = "clean"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.source not in SOURCES:
            raise ValueError(f"source must be one of {SOURCES}, got {self.source!r}")
        if self.input_kind not in INPUT_KINDS:
            raise ValueError(f"input_kind must be one of {INPUT_KINDS}, got {self.input_kind!r}")

    @property
    def hw(self) -> tuple[int, int]:
        return self.grid.shape[-2:]

    @property
    def batched(self) -> bool:
        return self.grid.ndim == 3

    def __len__(self) -> int:
        return self.grid.shape[0] if self.batched else 1

    def values(self) -> np.ndarray:
        return self.grid.data

    def __getitem__(self, i: int) -> "AttentionMap":
        if not self.batched:
            raise IndexError("single map is not indexable")
        cid = self.class_id[i] if np.ndim(self.class_id) else self.class_id
        return AttentionMap(
            T.reshape(T.take(self.grid, np.full((1, *self.hw), i), axis=0), self.hw),
            int(cid),
            self.kind,
            self.source,
            self.input_kind,
        )


class ModelPair(NamedTuple):
    original: DualEncoder
    target: DualEncoder

    def get(self, source: str) -> DualEncoder:
        if source == "original_model":
            return self.original
        if source == "target_model":
            return self.target
        raise ValueError(f"source must be one of {SOURCES}, got {source!r}")


def _attention_grid(f_g, g_t, out_h: int, out_w: int) -> Tensor:
    f_g = T._as_tensor(f_g)
    g_t = T._as_tensor(g_t)
    P = f_g.shape[-2]
    side = math.isqrt(P)
    if side * side != P:
        raise T.ShapeError(f"patch count {P} is not a perfect square")
    if f_g.shape[-1] != g_t.shape[-1]:
        raise T.ShapeError(f"feature dim {f_g.shape[-1]} != prompt dim {g_t.shape[-1]}")
    raw = f_g @ T.reshape(g_t, g_t.shape + (1,))  # (..., P, 1)
    raw = T.reshape(raw, raw.shape[:-2] + (side, side))
    return T.minmax_norm(T.bilinear_resize(raw, out_h, out_w))


def text_guided_attention(f_g, g_t, out_h: int, out_w: int, class_id=0, source="target_model", input_kind="clean") -> AttentionMap:
    """Class attention from patch features ``(…, P, d)`` and a prompt embedding ``(…, d)``."""
    return AttentionMap(_attention_grid(f_g, g_t, out_h, out_w), class_id, "class", source, input_kind)


def non_class_attention(f_g, g_t_non, out_h: int, out_w: int, class_id=0, source="target_model", input_kind="clean") -> AttentionMap:
    return AttentionMap(_attention_grid(f_g, g_t_non, out_h, out_w), class_id, "non_class", source, input_kind)


def complementary_attention(a: AttentionMap, a_non: AttentionMap) -> AttentionMap:
    """Fuse class attention with the complement of non-class attention: ``a * (1 - a_non)``."""
    if a.kind != "class" or a_non.kind != "non_class":
        raise ValueError(f"need (class, non_class) maps, got ({a.kind}, {a_non.kind})")
    if a.grid.shape != a_non.grid.shape:
        raise T.ShapeError(f"map shapes differ: {a.grid.shape} vs {a_non.grid.shape}")
    if (a.source, a.input_kind) != (a_non.source, a_non.input_kind):
        raise ValueError("class and non-class maps come from different model/input routes")
    grid = T.hadamard(a.grid, T.sub(1.0, a_non.grid))
    return AttentionMap(grid, a.class_id, "complementary", a.source, a.input_kind)


def maps_from_features(model: DualEncoder, f_g, labels, prompts: PromptSet, method: str, source: str, input_kind: str, text=None) -> AttentionMap:
    """Method-specific attention for the ground-truth prompt of each example.

    ``text`` may carry precomputed ``(class_embeddings, non_class_embeddings)``.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    labels = np.asarray(labels, dtype=np.intp)
    if labels.size and (labels.min() < 0 or labels.max() >= len(prompts)):
        raise ValueError(f"label out of range [0, {len(prompts)})")
    cfg = model.config
    if text is None:
        with T.no_grad():
            text = (class_text_embeddings(model, prompts), non_class_text_embeddings(model, prompts))
    g_cls, g_non = text
    class_id = labels if labels.ndim else int(labels)
    # text tower is frozen: prompt embeddings enter as constants
    a = text_guided_attention(f_g, Tensor(g_cls.data[labels]), cfg.height, cfg.width, class_id, source, input_kind)
    if method == "tga":
        return a
    a_non = non_class_attention(f_g, Tensor(g_non.data[labels]), cfg.height, cfg.width, class_id, source, input_kind)
    return complementary_attention(a, a_non)


def attention_for_example(models: ModelPair, x, label, prompts: PromptSet, method: str = "tga", source: str = "target_model", input_kind: str = "clean") -> AttentionMap:
    """Attention for ``x`` (single image or batch) routed through ``source``.

    Original-model maps are always computed without gradient tracking.
    """
    model = models.get(source)
    labels = np.asarray(label, dtype=np.intp)
    if labels.size and (labels.min() < 0 or labels.max() >= len(prompts)):
        raise ValueError(f"label out of range [0, {len(prompts)})")
    if source == "original_model":
        with T.no_grad():
            f_g, _ = encode_image(model, x)
            return maps_from_features(model, f_g, labels, prompts, method, source, input_kind)
    f_g, _ = encode_image(model, x)
    return maps_from_features(model, f_g, labels, prompts, method, source, input_kind)
