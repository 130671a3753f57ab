"""Toy dual encoder: patch-mixing image tower and bag-of-words text tower."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

IMAGE_PREFIX = "image."
TEXT_PREFIX = "text."


@dataclass
class EncoderConfig:
    height: int = 32
    width: int = 32
    channels: int = 3
    patch: int = 8
    dim: int = 32
    blocks: int = 2
    vocab_size: int = 64
    tau: float = 0.07
    seed: int = 0

    def __post_init__(self):
        self.validate()

    @property
    def grid(self) -> tuple[int, int]:
        return self.height // self.patch, self.width // self.patch

    @property
    def num_patches(self) -> int:
        gh, gw = self.grid
        return gh * gw

    def validate(self) -> None:
        if min(self.height, self.width, self.channels, self.patch) < 1:
            raise ValueError("height, width, channels and patch must be positive")
        if self.height % self.patch or self.width % self.patch:
            raise ValueError(f"patch {self.patch} must divide image size {self.height}x{self.width}")
        if self.height == self.width:
            side = int(round(self.num_patches ** 0.5))
            if side * side != self.num_patches:
                raise ValueError(f"patch count {self.num_patches} is not a perfect square")
        if self.dim < 2:
            raise ValueError(f"dim must be >= 2, got {self.dim}")
        if self.blocks < 1:
            raise ValueError(f"blocks must be >= 1, got {self.blocks}")
        if self.vocab_size < 1:
            raise ValueError(f"vocab_size must be >= 1, got {self.vocab_size}")
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")


# ---------------------------------------------------------------------------
# Prompts and vocabulary
# ---------------------------------------------------------------------------

CLASS_TEMPLATE = "this is a photo of a {}"
NON_CLASS_TEMPLATE = "this is not a photo of a {}"
BACKGROUND_PROMPT = "this is the background of the photo"


def tokenize(text: str) -> list[str]:
    return text.lower().split()


@dataclass
class PromptSet:
    """Tokenised class / non-class (and optional background) prompts."""

    class_names: list[str]
    class_prompts: list[list[str]]
    non_class_prompts: list[list[str]]
    background_prompt: list[str] | None = None

    @classmethod
    def from_classes(cls, names, background: bool = False) -> "PromptSet":
        names = [str(n).lower() for n in names]
        if not names:
            raise ValueError("empty prompt set")
        return cls(
            class_names=names,
            class_prompts=[tokenize(CLASS_TEMPLATE.format(n)) for n in names],
            non_class_prompts=[tokenize(NON_CLASS_TEMPLATE.format(n)) for n in names],
            background_prompt=tokenize(BACKGROUND_PROMPT) if background else None,
        )

    def __len__(self) -> int:
        return len(self.class_prompts)

    def words(self) -> list[str]:
        seen: dict[str, None] = {}
        for p in self.class_prompts + self.non_class_prompts + [self.background_prompt or []]:
            for w in p:
                seen.setdefault(w, None)
        return list(seen)


def build_vocab(prompts: PromptSet, size: int) -> dict[str, int]:
    words = sorted(set(tokenize(BACKGROUND_PROMPT)) | set(prompts.words()))
    if len(words) > size:
        raise ValueError(f"vocabulary needs {len(words)} entries but vocab_size is {size}")
    return {w: i for i, w in enumerate(words)}


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------

def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


@dataclass
class DualEncoder:
    config: EncoderConfig
    vocab: dict[str, int]
    params: dict[str, Tensor] = field(default_factory=dict)
    frozen: dict[str, bool] = field(default_factory=lambda: {"image": False, "text": False})

    @classmethod
    def init(cls, config: EncoderConfig, vocab: dict[str, int]) -> "DualEncoder":
        if len(vocab) > config.vocab_size:
            raise ValueError(f"vocab has {len(vocab)} words, vocab_size is {config.vocab_size}")
        rng = np.random.default_rng(config.seed)
        c, p, d, P, V = config.channels, config.patch, config.dim, config.num_patches, config.vocab_size
        k = c * p * p
        shapes: list[tuple[str, tuple[int, ...], int]] = [
            ("image.patch.w", (k, d), k),
            ("image.patch.b", (d,), k),
        ]
        for b in range(config.blocks):
            shapes += [
                (f"image.block{b}.mix", (P, P), P),
                (f"image.block{b}.ff1.w", (d, d), d),
                (f"image.block{b}.ff1.b", (d,), d),
                (f"image.block{b}.ff2.w", (d, d), d),
                (f"image.block{b}.ff2.b", (d,), d),
            ]
        shapes += [
            ("image.out.w", (d, d), d),
            ("image.out.b", (d,), d),
            ("image.pool.w", (d, d), d),
            ("image.pool.b", (d,), d),
            ("text.embed", (V, d), V),
            ("text.ff1.w", (d, d), d),
            ("text.ff1.b", (d,), d),
            ("text.ff2.w", (d, d), d),
            ("text.ff2.b", (d,), d),
        ]
        params = {name: Tensor(_uniform(rng, shape, fan), requires_grad=True) for name, shape, fan in shapes}
        return cls(config=config, vocab=dict(vocab), params=params)

    # -- parameter bookkeeping -------------------------------------------
    def branch(self, name: str) -> str:
        return "image" if name.startswith(IMAGE_PREFIX) else "text"

    def set_frozen(self, image: bool | None = None, text: bool | None = None) -> "DualEncoder":
        if image is not None:
            self.frozen["image"] = bool(image)
        if text is not None:
            self.frozen["text"] = bool(text)
        for name, p in self.params.items():
            p.requires_grad = not self.frozen[self.branch(name)]
            p.grad = None
        return self

    def trainable(self) -> dict[str, Tensor]:
        return {n: p for n, p in self.params.items() if not self.frozen[self.branch(n)]}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def clone(self) -> "DualEncoder":
        new = DualEncoder(
            config=copy.deepcopy(self.config),
            vocab=dict(self.vocab),
            params={n: Tensor(p.data.copy(), requires_grad=p.requires_grad) for n, p in self.params.items()},
            frozen=dict(self.frozen),
        )
        return new

    def state(self) -> dict[str, np.ndarray]:
        return {n: p.data for n, p in self.params.items()}


def _check_image(model: DualEncoder, x: Tensor) -> None:
    cfg = model.config
    want = (cfg.channels, cfg.height, cfg.width)
    if x.shape[-3:] != want or x.ndim not in (3, 4):
        raise T.ShapeError(f"image shape {x.shape} does not match (N,) {want}")


def patchify(model: DualEncoder, x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, P, C*p*p) in raster patch order."""
    cfg = model.config
    n = x.shape[0]
    gh, gw = cfg.grid
    p = cfg.patch
    x = T.reshape(x, (n, cfg.channels, gh, p, gw, p))
    x = T.transpose(x, (0, 2, 4, 1, 3, 5))
    return T.reshape(x, (n, gh * gw, cfg.channels * p * p))


def encode_image(model: DualEncoder, x) -> tuple[Tensor, Tensor]:
    """Return (patch features, pooled unit embedding).

    Patch features are taken after the embedding head, so the pooled
    embedding is the normalised mean of the patch rows.

    A single ``C×H×W`` image gives ``(P×d, d)``; a batch ``N×C×H×W`` gives
    ``(N×P×d, N×d)``.
    """
    x = T._as_tensor(x)
    _check_image(model, x)
    single = x.ndim == 3
    if single:
        x = T.reshape(x, (1,) + x.shape)
    pr = model.params
    h = patchify(model, x) @ pr["image.patch.w"] + pr["image.patch.b"]
    for b in range(model.config.blocks):
        h = h + pr[f"image.block{b}.mix"] @ h
        hidden = T.tanh(h @ pr[f"image.block{b}.ff1.w"] + pr[f"image.block{b}.ff1.b"])
        h = h + hidden @ pr[f"image.block{b}.ff2.w"] + pr[f"image.block{b}.ff2.b"]
    tokens = h @ pr["image.out.w"] + pr["image.out.b"]
    # the pooled head is linear, so applying it per patch and then averaging
    # equals averaging then projecting; f is then literally the pool of f_g
    f_g = tokens @ pr["image.pool.w"] + pr["image.pool.b"]
    f = T.normalize(T.mean(f_g, axis=1), axis=-1)
    if single:
        return T.reshape(f_g, f_g.shape[1:]), T.reshape(f, f.shape[1:])
    return f_g, f


def _token_ids(model: DualEncoder, prompt) -> list[int]:
    tokens = tokenize(prompt) if isinstance(prompt, str) else list(prompt)
    ids = []
    for tok in tokens:
        if tok not in model.vocab:
            raise KeyError(f"unknown token {tok!r}")
        ids.append(model.vocab[tok])
    if not ids:
        raise ValueError("empty prompt")
    return ids


def encode_text(model: DualEncoder, prompt) -> Tensor:
    """Unit-norm embedding of one prompt (token list or string)."""
    out = encode_texts(model, [prompt])
    return T.reshape(out, out.shape[1:])


def encode_texts(model: DualEncoder, prompts) -> Tensor:
    """Stack of unit-norm prompt embeddings, shape (len(prompts), d)."""
    pr = model.params
    V = model.config.vocab_size
    bags = np.zeros((len(prompts), V), dtype=np.float64)
    for i, prompt in enumerate(prompts):
        ids = _token_ids(model, prompt)
        for j in ids:
            bags[i, j] += 1.0 / len(ids)
    # mean of word embeddings, written as a (bag-of-words) matmul
    mean_emb = Tensor(bags) @ pr["text.embed"]
    hidden = T.tanh(mean_emb @ pr["text.ff1.w"] + pr["text.ff1.b"])
    out = hidden @ pr["text.ff2.w"] + pr["text.ff2.b"]
    return T.normalize(out, axis=-1)


def class_text_embeddings(model: DualEncoder, prompts: PromptSet) -> Tensor:
    if len(prompts) == 0:
        raise ValueError("empty prompt set")
    return encode_texts(model, prompts.class_prompts)


def non_class_text_embeddings(model: DualEncoder, prompts: PromptSet) -> Tensor:
    if len(prompts) == 0:
        raise ValueError("empty prompt set")
    return encode_texts(model, prompts.non_class_prompts)


def logits_from_embeddings(model: DualEncoder, f: Tensor, text: Tensor) -> Tensor:
    """cos(f, g_c) / tau for unit-norm inputs."""
    return T.scale(f @ T.transpose(text, (1, 0)), 1.0 / model.config.tau)


def class_logits(model: DualEncoder, x, prompts: PromptSet, text: Tensor | None = None) -> Tensor:
    if len(prompts) == 0:
        raise ValueError("empty prompt set")
    if text is None:
        text = class_text_embeddings(model, prompts)
    _, f = encode_image(model, x)
    return logits_from_embeddings(model, f, text)


def make_model(config: EncoderConfig, prompts: PromptSet) -> DualEncoder:
    return DualEncoder.init(config, build_vocab(prompts, config.vocab_size))


def original_and_target(pretrained: DualEncoder) -> tuple[DualEncoder, DualEncoder]:
    """Frozen reference copy and a copy with only the image tower trainable."""
    original = pretrained.clone().set_frozen(image=True, text=True)
    target = pretrained.clone().set_frozen(image=False, text=True)
    return original, target


def negation_loss(f: Tensor, text: Tensor, text_non: Tensor, labels, tau: float) -> Tensor:
    """Per class c, a two-way choice between "photo of c" and "not a photo of c".

    The class prompt is the true caption only for ``c == label``; for every
    other class, and for every class when ``label == -1`` (a background-only
    image), the non-class prompt is.  Averaged over images and classes.
    """
    from .objectives import cross_entropy

    labels = np.asarray(labels, dtype=np.intp).reshape(-1)
    n, c = len(labels), text.shape[0]
    pos = f @ T.transpose(text, (1, 0))
    neg = f @ T.transpose(text_non, (1, 0))
    pair = T.concat([T.reshape(pos, (n * c, 1)), T.reshape(neg, (n * c, 1))], axis=1)
    truth = (np.arange(c)[None, :] != labels[:, None]).astype(np.intp).reshape(-1)
    return cross_entropy(T.scale(pair, 1.0 / tau), truth)


def pretrain_clean(
    model: DualEncoder,
    data,
    prompts: PromptSet,
    epochs: int,
    lr: float,
    batch_size: int = 64,
    momentum: float = 0.9,
    seed: int = 0,
    negation_weight: float = 1.0,
    backgrounds: np.ndarray | None = None,
) -> tuple[DualEncoder, list[float]]:
    """Clean contrastive training of both towers (in place).

    The objective is the image-to-prompt cross-entropy over class prompts.
    With ``negation_weight > 0`` it adds :func:`negation_loss`, computed on
    the labelled images and on the optional shape-free ``backgrounds``,
    which are spread evenly over the batches.

    Returns the model and the per-epoch mean class-prompt cross-entropy.
    With ``epochs == 0`` the trace holds just the loss at initialisation.
    """
    from .data import stack
    from .objectives import contrastive_ce_loss
    from .optim import SGD

    if len(data) == 0:
        raise ValueError("empty training data")
    if lr < 0:
        raise ValueError(f"lr must be >= 0, got {lr}")
    images, labels, _ = stack(list(data))
    if backgrounds is None or negation_weight <= 0:
        backgrounds = np.zeros((0,) + images.shape[1:], dtype=np.float32)
    backgrounds = np.asarray(backgrounds, dtype=np.float32)
    tau = model.config.tau
    trainable = model.trainable()
    opt = SGD(trainable, lr=lr, momentum=momentum)
    rng = np.random.default_rng(seed)
    trace: list[float] = []
    if epochs == 0:
        with T.no_grad():
            text = class_text_embeddings(model, prompts)
            _, f = encode_image(model, images)
            trace.append(contrastive_ce_loss(f, text, labels, tau).item())
        return model, trace
    n_batches = -(-len(images) // batch_size)
    for _ in range(epochs):
        order = rng.permutation(len(images))
        bg_order = np.array_split(rng.permutation(len(backgrounds)), n_batches)
        total, count = 0.0, 0
        for b, start in enumerate(range(0, len(order), batch_size)):
            idx = order[start:start + batch_size]
            y = labels[idx]
            bg = backgrounds[bg_order[b]]
            opt.zero_grad()
            text = class_text_embeddings(model, prompts)
            _, f = encode_image(model, np.concatenate([images[idx], bg]))
            f_obj = T.take(f, np.broadcast_to(np.arange(len(idx))[:, None], (len(idx), f.shape[1])), axis=0)
            ce = contrastive_ce_loss(f_obj, text, y, tau)
            loss = ce
            if negation_weight > 0:
                y_all = np.concatenate([y, np.full(len(bg), -1)])
                nl = negation_loss(f, text, non_class_text_embeddings(model, prompts), y_all, tau)
                loss = loss + T.scale(nl, negation_weight)
            if trainable:
                loss.backward(inputs=list(trainable.values()))
            opt.step()
            total += ce.item() * len(idx)
            count += len(idx)
        trace.append(total / count)
    return model, trace
