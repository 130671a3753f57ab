"""Command-line entry points.

Every subcommand reads the run configuration (``--config``, or protocol
defaults) and works inside the output directory (``--out`` overrides the
configured one).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import io
from .attacks import attack as run_attack
from .attention import ModelPair, attention_for_example
from .config import RunConfig, default_config, load_config, write_config
from .data import Example, stack
from .pipeline import evaluate_all, finetune, make_datasets, pretrain, prompts_for

SUBCOMMANDS = ("gen-data", "pretrain", "finetune", "eval", "attack", "attn", "gradcheck")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="attnrobust", description="Attention-guided adversarial fine-tuning toolkit.")
    sub = p.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}")
    sub.required = True
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run configuration")
    common.add_argument("--out", type=Path, help="output directory (overrides the config)")
    common.add_argument("--seed", type=int, help="master seed override")
    helps = {
        "gen-data": "write train/test dataset files",
        "pretrain": "clean contrastive pre-training",
        "finetune": "adversarial fine-tuning with attention losses",
        "eval": "metrics for every configured attack",
        "attack": "attack test examples and save them with the objective trace",
        "attn": "export clean/adversarial attention maps from both models",
        "gradcheck": "finite-difference check of ops and objective",
    }
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name, parents=[common], help=helps[name])
        if name in ("pretrain", "finetune", "eval", "attack", "attn"):
            sp.add_argument("--data", type=Path, help="directory with train.tgad/test.tgad (default: out)")
        if name in ("finetune", "eval", "attack", "attn"):
            sp.add_argument("--model", type=Path, help="checkpoint to load")
        if name in ("eval", "attack", "attn"):
            sp.add_argument("--original", type=Path, help="undefended checkpoint (default: out/pretrained.tgac)")
            sp.add_argument("--attack", help="name of one configured eval attack")
        if name in ("attack", "attn"):
            sp.add_argument("--n", type=int, default=None, help="number of test examples")
    return p


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else default_config(out="runs")
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.out is not None:
        cfg.out = str(args.out)
    return cfg


def _data(args, cfg: RunConfig, split: str) -> list[Example]:
    root = args.data if getattr(args, "data", None) else Path(cfg.out)
    return io.load_dataset(root / f"{split}.tgad")


def _ckpt(path, default: Path):
    return io.checkpoint_load(path if path else default)


def cmd_gen_data(args, cfg: RunConfig, out: Path) -> None:
    train, test = make_datasets(cfg)
    io.save_dataset(train, out / "train.tgad")
    io.save_dataset(test, out / "test.tgad")
    write_config(cfg, out / "config.yaml")
    print(f"wrote {len(train)} train and {len(test)} test examples to {out}")


def cmd_pretrain(args, cfg: RunConfig, out: Path) -> None:
    model, trace = pretrain(cfg, _data(args, cfg, "train"))
    io.checkpoint_save(model, out / "pretrained.tgac")
    io.write_csv(out / "pretrain_loss.csv", ["epoch", "ce"], list(enumerate(trace)))
    print(f"pretrained: final ce {trace[-1]:.4f}")


def cmd_finetune(args, cfg: RunConfig, out: Path) -> None:
    pretrained = _ckpt(args.model, out / "pretrained.tgac")
    pair, rows = finetune(cfg, pretrained, _data(args, cfg, "train"))
    io.checkpoint_save(pair.target, out / "finetuned.tgac")
    io.write_loss_trace(out / "finetune_loss.csv", rows)
    if rows:
        print(f"finetuned: last batch total {rows[-1].total:.4f}")


def _pair(args, out: Path) -> ModelPair:
    original = _ckpt(args.original, out / "pretrained.tgac")
    target = _ckpt(args.model, out / "finetuned.tgac")
    return ModelPair(original.set_frozen(image=True, text=True), target)


def cmd_eval(args, cfg: RunConfig, out: Path) -> None:
    pair = _pair(args, out)
    names = [cfg.attack(args.attack)[0]] if args.attack else None
    results = evaluate_all(cfg, pair, _data(args, cfg, "test"), names)
    io.write_metrics(out / "metrics.csv", [(r.model, r.attack, r.report) for r in results],
                     {"master_seed": cfg.seed, "method": cfg.method})
    for r in results:
        print(f"{r.model:8s} {r.attack:12s} clean {r.report.a_clean:.3f} robust {r.report.a_robust:.3f}")


def _subset(args, cfg, default_n: int):
    test = _data(args, cfg, "test")
    n = default_n if args.n is None else args.n
    if n < 1:
        raise ValueError(f"--n must be >= 1, got {n}")
    return test[:n]


def cmd_attack(args, cfg: RunConfig, out: Path) -> None:
    pair = _pair(args, out)
    name, atk = cfg.attack(args.attack)
    examples = _subset(args, cfg, 16)
    x, y, masks = stack(examples)
    trace: list[float] = []
    adv = run_attack(pair, x, prompts_for(cfg), y, atk, trace=trace)
    io.save_dataset([Example(a, int(l), m) for a, l, m in zip(adv, y, masks)], out / f"adv_{name}.tgad")
    io.write_csv(out / f"attack_trace_{name}.csv", ["step", "objective"], list(enumerate(trace)))
    print(f"attack {name}: linf {float(np.abs(adv - x).max()):.6f}, final objective {trace[-1]:.4f}")


def cmd_attn(args, cfg: RunConfig, out: Path) -> None:
    pair = _pair(args, out)
    name, atk = cfg.attack(args.attack)
    examples = _subset(args, cfg, 4)
    x, y, _ = stack(examples)
    prompts = prompts_for(cfg)
    adv = run_attack(pair, x, prompts, y, atk)
    folder = out / "attn"
    folder.mkdir(parents=True, exist_ok=True)
    for inputs, kind in ((x, "clean"), (adv, "adversarial")):
        for source in ("original_model", "target_model"):
            maps = attention_for_example(pair, inputs, y, prompts, cfg.method, source, kind)
            for i in range(len(maps)):
                io.export_attention(maps[i], folder / f"ex{i}_{kind}_{source}.pgm")
    print(f"exported {4 * len(examples)} maps to {folder}")


def cmd_gradcheck(args, cfg: RunConfig, out: Path) -> int:
    from .gradcheck import run_all

    res = run_all(cfg.seed)
    print(f"ops: max error {max(res['ops'].values()):.3e}")
    print(f"objective: max error {max(res['objective'].values()):.3e}")
    print(f"max error {res['max_error']:.3e} ({res['seconds']:.1f}s)")
    return 0 if res["max_error"] < 1e-3 else 1


COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "attack": cmd_attack,
    "attn": cmd_attn,
    "gradcheck": cmd_gradcheck,
}


def cli(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        cfg = _config(args)
        out = Path(cfg.out)
        if args.command != "gradcheck":
            out.mkdir(parents=True, exist_ok=True)
        status = COMMANDS[args.command](args, cfg, out)
    except (ValueError, KeyError, OSError) as e:
        print(f"attnrobust {args.command}: error: {e}", file=sys.stderr)
        return 1
    return int(status or 0)


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
