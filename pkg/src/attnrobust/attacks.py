"""L-infinity attacks: PGD on cross-entropy, LSE margin, and attention-adaptive variants."""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as T
from .attention import ModelPair, maps_from_features
from .encoders import DualEncoder, PromptSet, class_text_embeddings, encode_image, logits_from_embeddings, non_class_text_embeddings
from .objectives import attention_distance
from .tensor import Tensor

OBJECTIVES = ("ce", "lse_margin", "adaptive_tga", "adaptive_comp_tga")


@dataclass
class AttackConfig:
    epsilon: float = 1 / 255
    step_size: float = 1 / 255
    iterations: int = 100
    objective: str = "ce"
    lam: float = 1.0
    tau_margin: float = 1.0
    pixel_lo: float = 0.0
    pixel_hi: float = 1.0
    random_start: bool = False
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if not self.step_size >= 0:
            raise ValueError(f"step_size must be >= 0, got {self.step_size}")
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise ValueError(f"iterations must be a positive integer, got {self.iterations}")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if not self.lam >= 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if not self.tau_margin > 0:
            raise ValueError(f"tau_margin must be > 0, got {self.tau_margin}")
        if not self.pixel_lo < self.pixel_hi:
            raise ValueError(f"pixel_lo ({self.pixel_lo}) must be < pixel_hi ({self.pixel_hi})")

    def replace(self, **changes) -> "AttackConfig":
        return AttackConfig(**{**asdict(self), **changes})


def project_linf(x_adv, x, cfg: AttackConfig) -> np.ndarray:
    """Clip into the epsilon box around ``x``, then into the pixel range."""
    x_adv = np.asarray(x_adv, dtype=np.float32)
    x = np.asarray(x, dtype=np.float32)
    if x_adv.shape != x.shape:
        raise T.ShapeError(f"project_linf: shapes differ {x_adv.shape} vs {x.shape}")
    eps = np.float32(cfg.epsilon)
    out = np.minimum(np.maximum(x_adv, x - eps), x + eps)
    return np.clip(out, np.float32(cfg.pixel_lo), np.float32(cfg.pixel_hi)).astype(np.float32)


def lse_margin(scores: Tensor, labels, tau: float) -> Tensor:
    """Per-example ``tau * log sum_{n != m} exp(s_n / tau) - s_m``."""
    scores = T._as_tensor(scores)
    labels = np.asarray(labels, dtype=np.intp).reshape(-1)
    n, c = scores.shape
    if c < 2:
        raise ValueError("LSE margin needs at least two classes")
    others = np.array([[k for k in range(c) if k != y] for y in labels], dtype=np.intp)
    s_other = T.take(scores, others, axis=1)
    s_true = T.reshape(T.take(scores, labels.reshape(-1, 1), axis=1), (n,))
    return T.scale(T.log_sum_exp(T.scale(s_other, 1.0 / tau), axis=1), tau) - s_true


class _Objective:
    """Batched attack objective; ``__call__`` returns the summed scalar."""

    def __init__(self, models: ModelPair, x: np.ndarray, labels: np.ndarray, prompts: PromptSet, cfg: AttackConfig):
        self.models = models
        self.cfg = cfg
        self.labels = labels
        model = models.target
        with T.no_grad():
            self.text = class_text_embeddings(model, prompts)
            self.text_non = non_class_text_embeddings(model, prompts)
        self.prompts = prompts
        self.clean_maps = None
        if cfg.objective.startswith("adaptive"):
            method = "tga" if cfg.objective == "adaptive_tga" else "comp_tga"
            self.method = method
            ori = models.original
            with T.no_grad():
                f_g, _ = encode_image(ori, x)
                self.clean_maps = maps_from_features(
                    ori, f_g, labels, prompts, method, "original_model", "clean",
                    text=(class_text_embeddings(ori, prompts), non_class_text_embeddings(ori, prompts)),
                )
        if cfg.objective != "ce" and len(prompts) < 2:
            raise ValueError("LSE margin needs at least two classes")

    def per_example(self, xt: Tensor) -> Tensor:
        model = self.models.target
        f_g, f = encode_image(model, xt)
        if self.cfg.objective == "ce":
            logits = logits_from_embeddings(model, f, self.text)
            return cross_entropy_per_example(logits, self.labels)
        scores = f @ T.transpose(self.text, (1, 0))
        obj = lse_margin(scores, self.labels, self.cfg.tau_margin)
        if self.clean_maps is not None:
            adv = maps_from_features(
                model, f_g, self.labels, self.prompts, self.method, "target_model", "adversarial",
                text=(self.text, self.text_non),
            )
            obj = obj + T.scale(attention_distance(adv.grid, self.clean_maps.grid), self.cfg.lam)
        return obj

    def __call__(self, xt: Tensor) -> Tensor:
        return T.sum_(self.per_example(xt))


def cross_entropy_per_example(logits: Tensor, labels) -> Tensor:
    labels = np.asarray(labels, dtype=np.intp).reshape(-1, 1)
    picked = T.reshape(T.take(logits, labels, axis=-1), (-1,))
    return T.log_sum_exp(logits, axis=-1) - picked


def run_attack(models, x, labels, prompts: PromptSet, cfg: AttackConfig, trace: list | None = None) -> np.ndarray:
    """Sign-gradient ascent with projection after every step.

    ``models`` is a :class:`ModelPair` or a single encoder (then used as both
    members).  The attacked model is ``models.target``.  When ``trace`` is a
    list, the mean objective before each step is appended to it.
    """
    if isinstance(models, DualEncoder):
        models = ModelPair(models, models)
    x = np.asarray(x, dtype=np.float32)
    single = x.ndim == 3
    if single:
        x = x[None]
    labels = np.asarray(labels, dtype=np.intp).reshape(-1)
    if labels.size != x.shape[0]:
        raise ValueError(f"{labels.size} labels for {x.shape[0]} images")
    if labels.min() < 0 or labels.max() >= len(prompts):
        raise ValueError(f"label out of range [0, {len(prompts)})")
    objective = _Objective(models, x, labels, prompts, cfg)
    x_adv = x.copy()
    if cfg.random_start and cfg.epsilon > 0:
        rng = np.random.default_rng(cfg.seed)
        x_adv = project_linf(x + rng.uniform(-cfg.epsilon, cfg.epsilon, size=x.shape), x, cfg)
    step = np.float32(cfg.step_size)
    for _ in range(int(cfg.iterations)):
        xt = Tensor(x_adv, requires_grad=True)
        value = objective(xt)
        value.backward(inputs=[xt])
        if trace is not None:
            trace.append(value.item() / len(labels))
        x_adv = project_linf(x_adv + step * np.sign(xt.grad), x, cfg)
    return x_adv[0] if single else x_adv


def pgd_attack(model: DualEncoder, x, prompts: PromptSet, y, cfg: AttackConfig, trace=None) -> np.ndarray:
    """PGD ascent on the contrastive cross-entropy."""
    if cfg.objective != "ce":
        cfg = cfg.replace(objective="ce")
    return run_attack(model, x, y, prompts, cfg, trace)


def lse_margin_attack(model: DualEncoder, x, prompts: PromptSet, y, cfg: AttackConfig, trace=None) -> np.ndarray:
    if len(prompts) < 2:
        raise ValueError("LSE margin attack needs at least two classes")
    if cfg.objective != "lse_margin":
        cfg = cfg.replace(objective="lse_margin")
    return run_attack(model, x, y, prompts, cfg, trace)


def adaptive_attack(models: ModelPair, x, prompts: PromptSet, y, cfg: AttackConfig, trace=None) -> np.ndarray:
    """LSE margin plus ``lam`` times the attention drift from the original model's clean map."""
    if cfg.objective not in ("adaptive_tga", "adaptive_comp_tga"):
        raise ValueError(f"adaptive attack needs an adaptive objective, got {cfg.objective!r}")
    if len(prompts) < 2:
        raise ValueError("LSE margin attack needs at least two classes")
    return run_attack(models, x, y, prompts, cfg, trace)


def attack(models, x, prompts: PromptSet, y, cfg: AttackConfig, trace=None) -> np.ndarray:
    """Dispatch on ``cfg.objective``."""
    if cfg.objective.startswith("adaptive"):
        if isinstance(models, DualEncoder):
            models = ModelPair(models, models)
        return adaptive_attack(models, x, prompts, y, cfg, trace)
    target = models.target if isinstance(models, ModelPair) else models
    if cfg.objective == "lse_margin":
        return lse_margin_attack(target, x, prompts, y, cfg, trace)
    return pgd_attack(target, x, prompts, y, cfg, trace)
