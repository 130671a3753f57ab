"""The gen-data → pretrain → finetune → eval stages, driven by a RunConfig."""

from __future__ import annotations

from dataclasses import dataclass

from .attention import ModelPair
from .config import RunConfig
from .data import Example, gen_backgrounds, gen_synthetic
from .encoders import DualEncoder, PromptSet, make_model, original_and_target, pretrain_clean
from .evalkit import MetricsReport, evaluate
from .objectives import LossRow, finetune_adversarial


def prompts_for(cfg: RunConfig) -> PromptSet:
    return PromptSet.from_classes(cfg.dataset.classes)


def make_datasets(cfg: RunConfig) -> tuple[list[Example], list[Example]]:
    ds, enc = cfg.dataset, cfg.encoder
    size = (enc.height, enc.width)
    train = gen_synthetic(ds.seed, ds.n_train, ds.classes, ds.noise, size, enc.channels, ds.colour_contrast)
    test = gen_synthetic(ds.test_seed, ds.n_test, ds.classes, ds.noise, size, enc.channels, ds.colour_contrast)
    return train, test


def pretrain(cfg: RunConfig, train: list[Example]) -> tuple[DualEncoder, list[float]]:
    prompts = prompts_for(cfg)
    ds, enc, pc = cfg.dataset, cfg.encoder, cfg.pretrain
    model = make_model(cfg.encoder, prompts)
    backgrounds = gen_backgrounds(ds.backgrounds_seed, ds.backgrounds, ds.noise, (enc.height, enc.width), enc.channels)
    return pretrain_clean(
        model, train, prompts, epochs=pc.epochs, lr=pc.lr, batch_size=pc.batch_size,
        momentum=pc.momentum, seed=pc.seed, negation_weight=pc.negation_weight, backgrounds=backgrounds,
    )


def finetune(cfg: RunConfig, pretrained: DualEncoder, train: list[Example]) -> tuple[ModelPair, list[LossRow]]:
    """Adversarially fine-tune a copy of ``pretrained``; the original stays untouched."""
    original, target = original_and_target(pretrained)
    target, rows = finetune_adversarial(original, target, train, prompts_for(cfg), cfg.train)
    return ModelPair(original, target), rows


@dataclass
class Evaluation:
    model: str
    attack: str
    report: MetricsReport


def evaluate_all(cfg: RunConfig, pair: ModelPair, test: list[Example], attacks: list[str] | None = None,
                 include_original: bool = True) -> list[Evaluation]:
    """Metrics for the fine-tuned target and, optionally, the undefended original."""
    names = list(cfg.eval_attacks) if attacks is None else attacks
    prompts = prompts_for(cfg)
    out = []
    for name in names:
        _, atk = cfg.attack(name)
        if include_original:
            rep = evaluate(ModelPair(pair.original, pair.original), test, prompts, atk, cfg.method, cfg.seed, cfg.eval_batch_size)
            out.append(Evaluation("original", name, rep))
        rep = evaluate(pair, test, prompts, atk, cfg.method, cfg.seed, cfg.eval_batch_size)
        out.append(Evaluation("target", name, rep))
    return out
