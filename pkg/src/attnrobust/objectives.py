"""Training losses and the adversarial fine-tuning loop."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from . import tensor as T
from .tensor import Tensor

if TYPE_CHECKING:
    from .attacks import AttackConfig


def contrastive_ce_loss(image_embeds, text_embeds, labels, tau: float) -> Tensor:
    """Mean negative log-softmax of cos/tau at the true class."""
    image_embeds = T._as_tensor(image_embeds)
    text_embeds = T._as_tensor(text_embeds)
    labels = np.asarray(labels, dtype=np.intp).reshape(-1)
    n_classes = text_embeds.shape[0]
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"label out of range [0, {n_classes})")
    if image_embeds.ndim == 1:
        image_embeds = T.reshape(image_embeds, (1, -1))
    logits = T.scale(image_embeds @ T.transpose(text_embeds, (1, 0)), 1.0 / tau)
    return cross_entropy(logits, labels)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    labels = np.asarray(labels, dtype=np.intp).reshape(-1, 1)
    picked = T.take(logits, labels, axis=-1)
    return T.mean(T.log_sum_exp(logits, axis=-1) - T.reshape(picked, (-1,)))


def attention_distance(a, b) -> Tensor:
    """Per-example Euclidean distance between maps over all H·W cells."""
    a, b = T._as_tensor(a), T._as_tensor(b)
    if a.shape != b.shape:
        raise T.ShapeError(f"map shapes differ: {a.shape} vs {b.shape}")
    diff = T.sub(a, b)
    if diff.ndim == 2:
        return T.l2_norm(T.reshape(diff, (-1,)), axis=-1)
    return T.l2_norm(T.reshape(diff, (diff.shape[0], -1)), axis=-1)


def _as_batch(maps):
    from .attention import AttentionMap

    if isinstance(maps, AttentionMap):
        return [maps]
    maps = list(maps)
    if not maps:
        raise ValueError("empty map list")
    return maps


def _mean_distance(first, second) -> Tensor:
    if len(first) != len(second):
        raise ValueError(f"map lists differ in length: {len(first)} vs {len(second)}")
    dists = []
    for a, b in zip(first, second):
        d = attention_distance(a.grid, b.grid)
        dists.append(T.reshape(d, (-1,)))
    total = dists[0] if len(dists) == 1 else T.concat(dists, axis=0)
    return T.mean(total)


def _check_tags(maps, source: str, input_kind: str, role: str) -> None:
    for m in maps:
        if (m.source, m.input_kind) != (source, input_kind):
            raise ValueError(f"{role} maps must be ({source}, {input_kind}), got ({m.source}, {m.input_kind})")


def larm_loss(adv_target_maps, clean_original_maps) -> Tensor:
    """Mean distance between adversarial target-model maps and clean original-model maps.

    Accepts lists of maps or batched :class:`AttentionMap` objects; batched
    maps count one term per example.
    """
    adv, ori = _as_batch(adv_target_maps), _as_batch(clean_original_maps)
    _check_tags(adv, "target_model", "adversarial", "adversarial target")
    _check_tags(ori, "original_model", "clean", "clean original")
    return _mean_distance(adv, ori)


def gacm_loss(clean_target_maps, clean_original_maps) -> Tensor:
    """Mean distance between clean-input maps of the two models (symmetric)."""
    tar, ori = _as_batch(clean_target_maps), _as_batch(clean_original_maps)
    for m in tar + ori:
        if m.input_kind != "clean":
            raise ValueError(f"global constraint maps must be clean, got {m.input_kind}")
    for a, b in zip(tar, ori):
        if a.source == b.source:
            raise ValueError("global constraint compares maps from two different models")
    return _mean_distance(tar, ori)


DEFAULT_WEIGHTS = {"tga": (0.08, 0.05), "comp_tga": (0.10, 0.10)}


@dataclass
class LossWeights:
    alpha: float | None = None
    beta: float | None = None
    method: str = "comp_tga"

    def __post_init__(self):
        if self.method not in DEFAULT_WEIGHTS:
            raise ValueError(f"method must be one of {tuple(DEFAULT_WEIGHTS)}, got {self.method!r}")
        a, b = DEFAULT_WEIGHTS[self.method]
        if self.alpha is None:
            self.alpha = a
        if self.beta is None:
            self.beta = b
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


def total_loss(ce, larm, gacm, w: LossWeights):
    """``ce + alpha * larm + beta * gacm``; works on floats and tensors."""
    for name, v in (("ce", ce), ("larm", larm), ("gacm", gacm)):
        arr = v.data if isinstance(v, Tensor) else np.asarray(v)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{name} is not finite")
    if not any(isinstance(v, Tensor) for v in (ce, larm, gacm)):
        return ce + w.alpha * larm + w.beta * gacm
    return T.add(T.add(ce, T.scale(larm, w.alpha)), T.scale(gacm, w.beta))


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 128
    lr: float = 1e-4
    momentum: float = 0.9
    weight_decay: float = 0.0
    attack: "AttackConfig | None" = None
    weights: LossWeights | None = None
    seed: int = 0

    def __post_init__(self):
        from .attacks import AttackConfig

        if self.attack is None:
            self.attack = AttackConfig(epsilon=1 / 255, step_size=1 / 255, iterations=2, objective="ce")
        if self.weights is None:
            self.weights = LossWeights(method="comp_tga")
        if self.lr < 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")


@dataclass
class LossRow:
    epoch: int
    batch: int
    ce: float
    larm: float
    gacm: float
    total: float


def batch_losses(original, target, x, x_adv, labels, prompts, weights: LossWeights, text=None):
    """The three loss terms and their weighted total for one batch.

    ``x_adv`` is treated as fixed input data.  Original-model maps are built
    without gradient tracking.
    """
    from .attention import maps_from_features
    from .encoders import class_text_embeddings, encode_image, non_class_text_embeddings

    method = weights.method
    if text is None:
        with T.no_grad():
            text = (class_text_embeddings(target, prompts), non_class_text_embeddings(target, prompts))
    f_g_adv, f_adv = encode_image(target, x_adv)
    ce = contrastive_ce_loss(f_adv, text[0], labels, target.config.tau)
    f_g_clean, _ = encode_image(target, x)
    with T.no_grad():
        f_g_ori, _ = encode_image(original, x)
        ori_maps = maps_from_features(original, f_g_ori, labels, prompts, method, "original_model", "clean", text=text)
    adv_maps = maps_from_features(target, f_g_adv, labels, prompts, method, "target_model", "adversarial", text=text)
    clean_maps = maps_from_features(target, f_g_clean, labels, prompts, method, "target_model", "clean", text=text)
    larm = larm_loss(adv_maps, ori_maps)
    gacm = gacm_loss(clean_maps, ori_maps)
    return ce, larm, gacm, total_loss(ce, larm, gacm, weights)


def finetune_adversarial(original, target, data, prompts, cfg: TrainConfig):
    """Adversarial fine-tuning of the target image tower (in place).

    Each batch is attacked against the current target model, then one SGD
    step is taken on the weighted sum of cross-entropy (on the adversarial
    batch), local refinement and global constraint losses.  Returns the
    target model and one :class:`LossRow` per batch.
    """
    from .attacks import pgd_attack
    from .data import stack
    from .encoders import class_text_embeddings, non_class_text_embeddings
    from .optim import SGD

    if len(data) == 0:
        raise ValueError("empty training data")
    if not (original.frozen["image"] and original.frozen["text"]):
        raise ValueError("original model must be fully frozen")
    if not target.frozen["text"]:
        raise ValueError("target model's text tower must be frozen")
    if cfg.attack.objective != "ce":
        raise ValueError(f"training attack must use the ce objective, got {cfg.attack.objective!r}")
    images, labels, _ = stack(list(data))
    params = target.trainable()
    opt = SGD(params, lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    with T.no_grad():
        text = (class_text_embeddings(target, prompts), non_class_text_embeddings(target, prompts))
    rows: list[LossRow] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(images))
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            x, y = images[idx], labels[idx]
            x_adv = pgd_attack(target, x, prompts, y, cfg.attack)
            opt.zero_grad()
            ce, larm, gacm, total = batch_losses(original, target, x, x_adv, y, prompts, cfg.weights, text=text)
            if params:
                total.backward(inputs=list(params.values()))
            opt.step()
            rows.append(LossRow(epoch, b, ce.item(), larm.item(), gacm.item(), total.item()))
    return target, rows
