"""Finite-difference gradient suites for the tensor ops and the training objective."""

from __future__ import annotations

import time

import numpy as np

from . import tensor as T
from .tensor import Tensor, grad_check


def _weighted(fn, shape, rng):
    """Scalar probe ``sum(fn(x) * W)`` with a fixed random ``W``."""
    w = rng.normal(size=shape)
    return lambda x: T.sum_(T.hadamard(fn(x), Tensor(w)))


def op_cases(seed: int = 0):
    """``(name, f, point)`` triples covering every registered op."""
    rng = np.random.default_rng(seed)
    x34 = rng.normal(size=(3, 4))
    pos = rng.uniform(0.5, 2.0, size=(3, 4))
    b34 = rng.normal(size=(3, 4))
    b45 = rng.normal(size=(4, 5))
    # clamp probes stay clear of the kinks at +-0.75
    clamp_pt = rng.choice([-1, 1], size=(3, 4)) * rng.choice([rng.uniform(0.1, 0.6), rng.uniform(0.9, 1.5)], size=(3, 4))
    cases = [
        ("add", _weighted(lambda x: T.add(x, Tensor(b34)), (3, 4), rng), x34),
        ("sub", _weighted(lambda x: T.sub(Tensor(b34), x), (3, 4), rng), x34),
        ("hadamard", _weighted(lambda x: T.hadamard(x, x), (3, 4), rng), x34),
        ("div", _weighted(lambda x: T.div(Tensor(b34), x), (3, 4), rng), pos),
        ("scale", _weighted(lambda x: T.scale(x, -2.5), (3, 4), rng), x34),
        ("tanh", _weighted(T.tanh, (3, 4), rng), x34),
        ("exp", _weighted(T.exp, (3, 4), rng), x34),
        ("log", _weighted(T.log, (3, 4), rng), pos),
        ("sqrt", _weighted(T.sqrt, (3, 4), rng), pos),
        ("clamp", _weighted(lambda x: T.clamp(x, -0.75, 0.75), (3, 4), rng), clamp_pt),
        ("sum", _weighted(lambda x: T.sum_(x, axis=0), (4,), rng), x34),
        ("mean", _weighted(lambda x: T.mean(x, axis=1, keepdims=True), (3, 1), rng), x34),
        ("reshape", _weighted(lambda x: T.reshape(x, (2, 6)), (2, 6), rng), x34),
        ("transpose", _weighted(lambda x: T.transpose(x, (1, 0)), (4, 3), rng), x34),
        ("take", _weighted(lambda x: T.take(x, np.array([[0, 2, 2], [1, 1, 3], [3, 0, 0]]), axis=1), (3, 3), rng), x34),
        ("concat", _weighted(lambda x: T.concat([x, T.scale(x, 2.0)], axis=0), (6, 4), rng), x34),
        ("matmul", _weighted(lambda x: T.matmul(x, Tensor(b45)), (3, 5), rng), x34),
        ("matmul_batched", _weighted(lambda x: T.matmul(T.reshape(x, (3, 1, 4)), Tensor(b45)), (3, 1, 5), rng), x34),
        ("softmax", _weighted(lambda x: T.softmax(x, axis=-1), (3, 4), rng), x34),
        ("log_sum_exp", _weighted(lambda x: T.log_sum_exp(x, axis=1), (3,), rng), x34),
        ("l2_norm", _weighted(lambda x: T.l2_norm(x, axis=-1), (3,), rng), x34),
        ("cosine_sim", _weighted(lambda x: T.cosine_sim(x, Tensor(b34)), (3,), rng), x34),
        ("normalize", _weighted(lambda x: T.normalize(x, axis=-1), (3, 4), rng), x34),
        ("bilinear_resize", _weighted(lambda x: T.bilinear_resize(x, 7, 9), (7, 9), rng), x34),
        ("minmax_norm", _weighted(T.minmax_norm, (3, 4), rng), x34),
        ("minmax_norm_resized", _weighted(lambda x: T.minmax_norm(T.bilinear_resize(x, 6, 6)), (6, 6), rng), x34),
    ]
    return cases


def op_suite(seed: int = 0, h: float = 1e-5) -> dict[str, float]:
    """Max relative AD vs central-difference error per op."""
    return {name: grad_check(f, x, h=h) for name, f, x in op_cases(seed)}


def objective_suite(seed: int = 0, n_coords: int = 120, method: str = "comp_tga", h: float = 1e-5) -> dict[str, float]:
    """Gradient check of ``ce + alpha*larm + beta*gacm`` over random image-tower coordinates.

    The target starts as a small perturbation of the original so the
    attention distances sit away from zero.  ``n_coords`` coordinates are
    spread over all trainable tensors in proportion to their size.
    """
    from .data import SHAPE_KINDS, gen_synthetic, stack
    from .encoders import EncoderConfig, PromptSet, make_model, original_and_target
    from .objectives import LossWeights, batch_losses

    rng = np.random.default_rng(seed)
    prompts = PromptSet.from_classes(SHAPE_KINDS)
    cfg = EncoderConfig(height=16, width=16, patch=4, dim=12, blocks=1, seed=seed)
    original, target = original_and_target(make_model(cfg, prompts))
    for p in target.trainable().values():
        p.data = (p.data + 0.05 * rng.normal(size=p.data.shape)).astype(p.data.dtype)
    data = gen_synthetic(seed, 4, size=(16, 16))
    x, y, _ = stack(data)
    x = x.astype(np.float64)
    x_adv = np.clip(x + rng.uniform(-4 / 255, 4 / 255, size=x.shape), 0, 1)
    weights = LossWeights(method=method)
    names = sorted(target.trainable())
    sizes = np.array([target.params[n].data.size for n in names], dtype=float)
    picks = rng.choice(int(sizes.sum()), size=min(n_coords, int(sizes.sum())), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    out = {}
    for i, name in enumerate(names):
        coords = [int(c - offsets[i]) for c in picks if offsets[i] <= c < offsets[i + 1]]
        if not coords:
            continue
        saved = target.params[name]

        def f(w, name=name):
            target.params[name] = w
            try:
                return batch_losses(original, target, x, x_adv, y, prompts, weights)[3]
            finally:
                target.params[name] = saved

        out[name] = grad_check(f, saved.data.astype(np.float64), h=h, coords=coords)
    return out


def run_all(seed: int = 0) -> dict:
    """Both suites plus the worst error and wall time."""
    t0 = time.perf_counter()
    ops = op_suite(seed)
    obj = {f"{m}:{k}": v for m in ("tga", "comp_tga") for k, v in objective_suite(seed, method=m).items()}
    return {
        "ops": ops,
        "objective": obj,
        "max_error": max(max(ops.values()), max(obj.values())),
        "seconds": time.perf_counter() - t0,
    }
