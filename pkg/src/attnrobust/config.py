"""Run configuration: a strict YAML document with protocol defaults.

Unknown keys anywhere are rejected.  Every section may carry its own
``seed``; missing seeds are derived from the top-level master ``seed``.
"""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .attacks import AttackConfig
from .data import SHAPE_KINDS
from .encoders import EncoderConfig
from .objectives import DEFAULT_WEIGHTS, LossWeights, TrainConfig

SEED_STREAMS = ("data_train", "data_test", "backgrounds", "init", "pretrain", "finetune", "attack")
# derived seeds stay below 2**24 so float32 checkpoint metadata stores them exactly
_SEED_MASK = 0xFFFFFF


class ConfigError(ValueError):
    pass


def fan_out(master: int) -> dict[str, int]:
    """Deterministic per-stream seeds from one master seed."""
    if master < 0:
        raise ConfigError(f"seed must be >= 0, got {master}")
    children = np.random.SeedSequence(int(master)).spawn(len(SEED_STREAMS))
    return {k: int(c.generate_state(1)[0]) & _SEED_MASK for k, c in zip(SEED_STREAMS, children)}


@dataclass
class DatasetSpec:
    seed: int = 0
    test_seed: int = 1
    n_train: int = 500
    n_test: int = 200
    classes: tuple[str, ...] = SHAPE_KINDS
    noise: float = 0.1
    colour_contrast: float = 0.7
    backgrounds: int = 100
    backgrounds_seed: int = 2

    def __post_init__(self):
        self.classes = tuple(self.classes)
        if len(self.classes) < 2:
            raise ConfigError("dataset needs at least two classes")
        if len(set(self.classes)) != len(self.classes):
            raise ConfigError("dataset classes must be distinct")
        if self.n_train < len(self.classes) or self.n_test < len(self.classes):
            raise ConfigError("n_train and n_test must be >= number of classes")
        if not 0 <= self.noise <= 0.3:
            raise ConfigError(f"noise must lie in [0, 0.3], got {self.noise}")
        if not 0 <= self.colour_contrast <= 1:
            raise ConfigError(f"colour_contrast must lie in [0, 1], got {self.colour_contrast}")
        if self.backgrounds < 0:
            raise ConfigError(f"backgrounds must be >= 0, got {self.backgrounds}")


@dataclass
class PretrainConfig:
    epochs: int = 100
    lr: float = 0.05
    batch_size: int = 50
    momentum: float = 0.9
    negation_weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr < 0 or self.negation_weight < 0:
            raise ConfigError("pretrain needs epochs >= 0, batch_size >= 1, lr >= 0, negation_weight >= 0")


def protocol_eval_attacks() -> dict[str, AttackConfig]:
    return {"pgd100": AttackConfig(epsilon=1 / 255, step_size=1 / 255, iterations=100, objective="ce")}


@dataclass
class RunConfig:
    out: str
    seed: int = 0
    method: str = "comp_tga"
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval_attacks: dict[str, AttackConfig] = field(default_factory=protocol_eval_attacks)
    eval_batch_size: int = 256
    # which seeds the document fixed; the rest follow the master seed
    explicit_seeds: frozenset = field(default=frozenset(), compare=False)

    def __post_init__(self):
        if not str(self.out):
            raise ConfigError("out must be a nonempty path")
        if self.method not in DEFAULT_WEIGHTS:
            raise ConfigError(f"method must be one of {tuple(DEFAULT_WEIGHTS)}, got {self.method!r}")
        if self.train.weights.method != self.method:
            raise ConfigError(f"train weights are for {self.train.weights.method!r}, run method is {self.method!r}")
        if not self.eval_attacks:
            raise ConfigError("at least one eval attack is required")
        if self.eval_batch_size < 1:
            raise ConfigError("eval batch_size must be >= 1")

    def attack(self, name: str | None = None) -> tuple[str, AttackConfig]:
        if name is None:
            name = next(iter(self.eval_attacks))
        if name not in self.eval_attacks:
            raise ConfigError(f"unknown attack {name!r}; configured: {list(self.eval_attacks)}")
        return name, self.eval_attacks[name]

    def with_seed(self, master: int) -> "RunConfig":
        """Re-derive every seed the document did not fix."""
        return _apply_seeds(dataclasses.replace(self, seed=int(master)))


# slot name -> (stream, owner object, attribute)
def _seed_slots(cfg: RunConfig):
    slots = {
        "dataset.seed": ("data_train", cfg.dataset, "seed"),
        "dataset.test_seed": ("data_test", cfg.dataset, "test_seed"),
        "dataset.backgrounds_seed": ("backgrounds", cfg.dataset, "backgrounds_seed"),
        "encoder.seed": ("init", cfg.encoder, "seed"),
        "pretrain.seed": ("pretrain", cfg.pretrain, "seed"),
        "train.seed": ("finetune", cfg.train, "seed"),
        "train.attack.seed": ("attack", cfg.train.attack, "seed"),
    }
    for name, atk in cfg.eval_attacks.items():
        slots[f"eval.{name}.seed"] = ("attack", atk, "seed")
    return slots


def _apply_seeds(cfg: RunConfig) -> RunConfig:
    cfg = copy.deepcopy(cfg)
    seeds = fan_out(cfg.seed)
    for slot, (stream, obj, attr) in _seed_slots(cfg).items():
        if slot not in cfg.explicit_seeds:
            setattr(obj, attr, seeds[stream])
    return cfg


def default_config(out: str = "runs", seed: int = 0, method: str = "comp_tga") -> RunConfig:
    """Protocol defaults: PGD-2 training and PGD-100 evaluation at 1/255."""
    train = TrainConfig(weights=LossWeights(method=method))
    return _apply_seeds(RunConfig(out=out, seed=seed, method=method, train=train))


def benchmark_config(out: str = "runs", seed: int = 0, method: str = "comp_tga") -> RunConfig:
    """Desk-scale benchmark: PGD-2 training at 6/255, PGD-10 evaluation at 8/255."""
    train = TrainConfig(
        epochs=10, batch_size=50, lr=0.003,
        attack=AttackConfig(epsilon=6 / 255, step_size=3 / 255, iterations=2, objective="ce"),
        weights=LossWeights(method=method),
    )
    attacks = {"pgd10": AttackConfig(epsilon=8 / 255, step_size=2 / 255, iterations=10, objective="ce")}
    return _apply_seeds(RunConfig(out=out, seed=seed, method=method, train=train, eval_attacks=attacks))


# -- parsing -----------------------------------------------------------------

def _check_keys(raw, where: str, allowed, required=()) -> dict:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(raw).__name__}")
    unknown = sorted(set(raw) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}; allowed: {sorted(allowed)}")
    for key in required:
        if key not in raw:
            raise ConfigError(f"{where}: missing required key {key!r}")
    return raw


def _build(cls, raw: dict, where: str, exclude=()):
    names = [f.name for f in dataclasses.fields(cls) if f.name not in exclude]
    raw = _check_keys(raw, where, names)
    try:
        return cls(**raw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from e


def _note_seed(raw: dict, slot: str, explicit: set) -> None:
    if raw.get("seed") is not None:
        explicit.add(slot)
    elif "seed" in raw:
        del raw["seed"]


def parse_config(doc) -> RunConfig:
    top = _check_keys(doc, "config", ("out", "seed", "method", "dataset", "encoder", "pretrain", "train", "eval"), ("out",))
    explicit: set[str] = set()
    method = top.get("method", "comp_tga")
    if method not in DEFAULT_WEIGHTS:
        raise ConfigError(f"method must be one of {tuple(DEFAULT_WEIGHTS)}, got {method!r}")

    ds = dict(_check_keys(top.get("dataset"), "dataset", [f.name for f in dataclasses.fields(DatasetSpec)]))
    for key, slot in (("seed", "dataset.seed"), ("test_seed", "dataset.test_seed"), ("backgrounds_seed", "dataset.backgrounds_seed")):
        if ds.get(key) is not None:
            explicit.add(slot)
        else:
            ds.pop(key, None)
    dataset = _build(DatasetSpec, ds, "dataset")

    enc = dict(_check_keys(top.get("encoder"), "encoder", [f.name for f in dataclasses.fields(EncoderConfig)]))
    _note_seed(enc, "encoder.seed", explicit)
    encoder = _build(EncoderConfig, enc, "encoder")

    pre = dict(_check_keys(top.get("pretrain"), "pretrain", [f.name for f in dataclasses.fields(PretrainConfig)]))
    _note_seed(pre, "pretrain.seed", explicit)
    pretrain = _build(PretrainConfig, pre, "pretrain")

    tr = dict(_check_keys(top.get("train"), "train",
                          ("epochs", "batch_size", "lr", "momentum", "weight_decay", "alpha", "beta", "seed", "attack")))
    _note_seed(tr, "train.seed", explicit)
    try:
        weights = LossWeights(alpha=tr.pop("alpha", None), beta=tr.pop("beta", None), method=method)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"train: {e}") from e
    atk_raw = dict(_check_keys(tr.pop("attack", None), "train.attack", [f.name for f in dataclasses.fields(AttackConfig)]))
    _note_seed(atk_raw, "train.attack.seed", explicit)
    train_attack = _build(AttackConfig, {"epsilon": 1 / 255, "step_size": 1 / 255, "iterations": 2, **atk_raw}, "train.attack")
    train = _build(TrainConfig, {**tr, "attack": train_attack, "weights": weights}, "train")

    ev = _check_keys(top.get("eval"), "eval", ("batch_size", "attacks"))
    attacks = protocol_eval_attacks()
    if "attacks" in ev:
        if not isinstance(ev["attacks"], list):
            raise ConfigError("eval.attacks must be a list")
        attacks = {}
        for i, entry in enumerate(ev["attacks"]):
            entry = dict(_check_keys(entry, f"eval.attacks[{i}]", ["name"] + [f.name for f in dataclasses.fields(AttackConfig)], ("name",)))
            name = str(entry.pop("name"))
            if name in attacks:
                raise ConfigError(f"eval.attacks: duplicate name {name!r}")
            _note_seed(entry, f"eval.{name}.seed", explicit)
            attacks[name] = _build(AttackConfig, {"epsilon": 1 / 255, "step_size": 1 / 255, "iterations": 100, **entry}, f"eval.attacks[{i}]")

    seed = top.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
    cfg = RunConfig(
        out=str(top["out"]), seed=seed, method=method, dataset=dataset, encoder=encoder,
        pretrain=pretrain, train=train, eval_attacks=attacks, eval_batch_size=int(ev.get("batch_size", 256)),
        explicit_seeds=frozenset(explicit),
    )
    return _apply_seeds(cfg)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: not valid YAML: {e}") from e
    return parse_config(doc)


def config_to_dict(cfg: RunConfig) -> dict:
    """Document form; seeds that follow the master seed are written as null."""
    atk = dataclasses.asdict
    train_attack = atk(cfg.train.attack)
    doc = {
        "out": cfg.out,
        "seed": cfg.seed,
        "method": cfg.method,
        "dataset": {**atk(cfg.dataset), "classes": list(cfg.dataset.classes)},
        "encoder": atk(cfg.encoder),
        "pretrain": atk(cfg.pretrain),
        "train": {
            "epochs": cfg.train.epochs,
            "batch_size": cfg.train.batch_size,
            "lr": cfg.train.lr,
            "momentum": cfg.train.momentum,
            "weight_decay": cfg.train.weight_decay,
            "alpha": cfg.train.weights.alpha,
            "beta": cfg.train.weights.beta,
            "seed": cfg.train.seed,
            "attack": train_attack,
        },
        "eval": {
            "batch_size": cfg.eval_batch_size,
            "attacks": [{"name": n, **atk(a)} for n, a in cfg.eval_attacks.items()],
        },
    }
    eval_by_name = {e["name"]: e for e in doc["eval"]["attacks"]}
    for slot in _seed_slots(cfg):
        if slot in cfg.explicit_seeds:
            continue
        parts = slot.split(".")
        if parts[0] == "eval":
            eval_by_name[parts[1]]["seed"] = None
        elif parts[:2] == ["train", "attack"]:
            doc["train"]["attack"]["seed"] = None
        else:
            doc[parts[0]][parts[1]] = None
    return doc


def write_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=False))
