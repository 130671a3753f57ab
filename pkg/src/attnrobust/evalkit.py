"""Accuracy, IoU metrics, attention shift and evaluation reports."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .attacks import AttackConfig, attack as run_attack
from .attention import AttentionMap, ModelPair, attention_for_example
from .data import SHAPE_KINDS, Example, gen_synthetic, stack
from .encoders import DualEncoder, PromptSet, class_logits
from .objectives import attention_distance

__all__ = [
    "Example",
    "gen_synthetic",
    "SHAPE_KINDS",
    "MetricsReport",
    "zero_shot_accuracy",
    "hard_iou",
    "soft_iou",
    "mean_soft_iou",
    "attention_shift",
    "evaluate",
]


def _pair(model) -> ModelPair:
    return model if isinstance(model, ModelPair) else ModelPair(model, model)


def _batches(n: int, size: int):
    for start in range(0, n, size):
        yield slice(start, min(start + size, n))


def predict(model: DualEncoder, images: np.ndarray, prompts: PromptSet, batch_size: int = 256) -> np.ndarray:
    preds = []
    with T.no_grad():
        for sl in _batches(len(images), batch_size):
            preds.append(class_logits(model, images[sl], prompts).data.argmax(axis=1))
    return np.concatenate(preds)


def zero_shot_accuracy(model, data, prompts: PromptSet, attack: AttackConfig | None = None, batch_size: int = 256) -> float:
    """Fraction classified correctly, optionally after a white-box attack on the same model.

    ``model`` may be a :class:`ModelPair`; its target member is evaluated
    and the original member feeds adaptive objectives.
    """
    data = list(data)
    if not data:
        raise ValueError("empty evaluation data")
    pair = _pair(model)
    images, labels, _ = stack(data)
    if attack is not None:
        adv = np.empty_like(images)
        for sl in _batches(len(images), batch_size):
            adv[sl] = run_attack(pair, images[sl], prompts, labels[sl], attack)
        images = adv
    return float(np.mean(predict(pair.target, images, prompts, batch_size) == labels))


def _binary(a: np.ndarray) -> bool:
    return bool(((a == 0) | (a == 1)).all())


def hard_iou(pred_mask, truth) -> float:
    pred = np.asarray(pred_mask)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {truth.shape}")
    if not (_binary(pred) and _binary(truth)):
        raise ValueError("hard_iou needs binary masks")
    p, t = pred.astype(bool), truth.astype(bool)
    union = np.logical_or(p, t).sum()
    if union == 0:
        raise ValueError("empty union")
    return float(np.logical_and(p, t).sum() / union)


def soft_iou(attn, truth) -> float:
    """Soft Jaccard index ``sum(A*M) / sum(A + M - A*M)`` (no binarisation)."""
    a = np.asarray(attn.values() if isinstance(attn, AttentionMap) else getattr(attn, "data", attn), dtype=np.float64)
    m = np.asarray(truth, dtype=np.float64)
    if a.shape != m.shape:
        raise ValueError(f"map shape {a.shape} != mask shape {m.shape}")
    if a.min() < 0 or a.max() > 1:
        raise ValueError("attention values must lie in [0, 1]")
    if not _binary(m):
        raise ValueError("mask must be binary")
    inter = np.sum(a * m)
    denom = np.sum(a + m - a * m)
    if denom == 0:
        raise ValueError("soft_iou undefined for all-zero map and mask")
    return float(inter / denom)


def _maps(pair: ModelPair, images, labels, prompts, method, source, input_kind, batch_size) -> np.ndarray:
    out = []
    with T.no_grad():
        for sl in _batches(len(images), batch_size):
            out.append(attention_for_example(pair, images[sl], labels[sl], prompts, method, source, input_kind).values())
    return np.concatenate(out)


def mean_soft_iou(model, data, prompts: PromptSet, method: str, attack: AttackConfig | None = None,
                  source: str = "target_model", batch_size: int = 256) -> float:
    """Per-example mean soft IoU of the method's maps against the masks."""
    pair = _pair(model)
    images, labels, masks = stack(list(data))
    input_kind = "clean"
    if attack is not None:
        images = np.concatenate([run_attack(pair, images[sl], prompts, labels[sl], attack) for sl in _batches(len(images), batch_size)])
        input_kind = "adversarial"
    maps = _maps(pair, images, labels, prompts, method, source, input_kind, batch_size)
    return float(np.mean([soft_iou(a, m) for a, m in zip(maps, masks)]))


def attention_shift(model, data, prompts: PromptSet, attack: AttackConfig, method: str = "tga", batch_size: int = 256) -> float:
    """Mean Euclidean distance between a model's maps on clean and attacked inputs."""
    data = list(data)
    if not data:
        raise ValueError("empty evaluation data")
    pair = _pair(model)
    images, labels, _ = stack(data)
    shifts = []
    for sl in _batches(len(images), batch_size):
        x, y = images[sl], labels[sl]
        adv = run_attack(pair, x, prompts, y, attack)
        clean_map = _maps(pair, x, y, prompts, method, "target_model", "clean", batch_size)
        adv_map = _maps(pair, adv, y, prompts, method, "target_model", "adversarial", batch_size)
        with T.no_grad():
            shifts.append(attention_distance(adv_map, clean_map).data.astype(np.float64))
    return float(np.mean(np.concatenate(shifts)))


@dataclass
class MetricsReport:
    a_robust: float
    a_clean: float
    mean_soft_iou_clean: float
    mean_soft_iou_adv: float
    mean_attention_shift: float
    attack: AttackConfig
    seed: int = 0
    method: str = "tga"
    iou_averaging: str = "micro (per-example mean)"
    a_overall: float = field(init=False)

    def __post_init__(self):
        self.a_overall = (self.a_robust + self.a_clean) / 2

    def rows(self) -> list[tuple[str, float]]:
        return [
            ("a_robust", self.a_robust),
            ("a_clean", self.a_clean),
            ("a_overall", self.a_overall),
            ("mean_soft_iou_clean", self.mean_soft_iou_clean),
            ("mean_soft_iou_adv", self.mean_soft_iou_adv),
            ("mean_attention_shift", self.mean_attention_shift),
        ]

    def echo(self) -> dict:
        return {"seed": self.seed, "method": self.method, "iou_averaging": self.iou_averaging,
                **{f"attack.{k}": v for k, v in asdict(self.attack).items()}}


def evaluate(model, data, prompts: PromptSet, attack: AttackConfig, method: str = "tga", seed: int = 0,
             batch_size: int = 256) -> MetricsReport:
    """Clean/robust accuracy, soft IoU on clean and attacked inputs, and attention shift."""
    data = list(data)
    if not data:
        raise ValueError("empty evaluation data")
    pair = _pair(model)
    images, labels, masks = stack(data)
    preds_clean = predict(pair.target, images, prompts, batch_size)
    adv = np.concatenate([run_attack(pair, images[sl], prompts, labels[sl], attack) for sl in _batches(len(images), batch_size)])
    preds_adv = predict(pair.target, adv, prompts, batch_size)
    clean_maps = _maps(pair, images, labels, prompts, method, "target_model", "clean", batch_size)
    adv_maps = _maps(pair, adv, labels, prompts, method, "target_model", "adversarial", batch_size)
    iou_c = np.mean([soft_iou(a, m) for a, m in zip(clean_maps, masks)])
    iou_a = np.mean([soft_iou(a, m) for a, m in zip(adv_maps, masks)])
    with T.no_grad():
        shift = attention_distance(adv_maps, clean_maps).data.astype(np.float64).mean()
    return MetricsReport(
        a_robust=float(np.mean(preds_adv == labels)),
        a_clean=float(np.mean(preds_clean == labels)),
        mean_soft_iou_clean=float(iou_c),
        mean_soft_iou_adv=float(iou_a),
        mean_attention_shift=float(shift),
        attack=attack,
        seed=seed,
        method=method,
    )
