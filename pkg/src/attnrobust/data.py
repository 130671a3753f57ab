"""Synthetic shape images with pixel-exact foreground masks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SHAPE_KINDS = ("disk", "square", "triangle", "cross")


@dataclass
class Example:
    image: np.ndarray  # (C, H, W) float32 in [0, 1]
    label: int
    mask: np.ndarray  # (H, W) uint8 in {0, 1}

    def __post_init__(self):
        if self.mask.dtype != np.uint8 or not np.isin(self.mask, (0, 1)).all():
            raise ValueError("mask must be uint8 with values in {0, 1}")
        if self.mask.sum() < 1:
            raise ValueError("mask must contain at least one foreground pixel")


def _shape_mask(kind: str, h: int, w: int, cy: float, cx: float, r: float, angle: float) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    yy += 0.5
    xx += 0.5
    dy, dx = yy - cy, xx - cx
    c, s = np.cos(angle), np.sin(angle)
    u, v = c * dx + s * dy, -s * dx + c * dy
    if kind == "disk":
        m = dx * dx + dy * dy <= r * r
    elif kind == "square":
        m = (np.abs(u) <= r * 0.85) & (np.abs(v) <= r * 0.85)
    elif kind == "triangle":
        # equilateral, circumradius r
        m = np.ones_like(u, dtype=bool)
        for k in range(3):
            t = angle + k * 2 * np.pi / 3
            nx, ny = np.cos(t), np.sin(t)
            m &= dx * nx + dy * ny <= r * 0.5
    elif kind == "cross":
        arm = r * 0.33
        m = ((np.abs(u) <= r) & (np.abs(v) <= arm)) | ((np.abs(v) <= r) & (np.abs(u) <= arm))
    else:
        raise ValueError(f"unknown shape kind {kind!r}; known: {SHAPE_KINDS}")
    return m


def _class_colour(label: int, channels: int, contrast: float = 1.0) -> np.ndarray:
    """Per-class base colour pulled towards grey by ``contrast``.

    Classes beyond the palette reuse it cyclically.
    """
    palette = np.array([[0.95, 0.2, 0.2], [0.2, 0.9, 0.25], [0.25, 0.3, 0.95], [0.95, 0.9, 0.2]])
    base = palette[label % len(palette)]
    return 0.5 + contrast * (np.resize(base, channels) - 0.5)


def _background(rng: np.random.Generator, c: int, h: int, w: int) -> np.ndarray:
    """Low-frequency colour field plus a faint stripe texture."""
    coarse = rng.uniform(0.15, 0.55, size=(c, 4, 4))
    ys = (np.arange(h) + 0.5) * 4 / h - 0.5
    xs = (np.arange(w) + 0.5) * 4 / w - 0.5
    ys, xs = np.clip(ys, 0, 3), np.clip(xs, 0, 3)
    y0, x0 = np.floor(ys).astype(int), np.floor(xs).astype(int)
    y1, x1 = np.minimum(y0 + 1, 3), np.minimum(x0 + 1, 3)
    wy, wx = (ys - y0)[:, None], (xs - x0)[None, :]
    bg = (
        coarse[:, y0][:, :, x0] * (1 - wy) * (1 - wx)
        + coarse[:, y0][:, :, x1] * (1 - wy) * wx
        + coarse[:, y1][:, :, x0] * wy * (1 - wx)
        + coarse[:, y1][:, :, x1] * wy * wx
    )
    freq = rng.uniform(0.3, 0.9)
    phase = rng.uniform(0, 2 * np.pi)
    theta = rng.uniform(0, np.pi)
    yy, xx = np.mgrid[0:h, 0:w]
    stripes = 0.05 * np.sin(freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
    return bg + stripes[None]


def gen_synthetic(
    seed: int,
    n: int,
    classes=SHAPE_KINDS,
    noise: float = 0.1,
    size: tuple[int, int] = (32, 32),
    channels: int = 3,
    colour_contrast: float = 0.7,
) -> list[Example]:
    """Generate ``n`` class-balanced single-shape images.

    Labels cycle through ``classes`` before shuffling, so counts differ by at
    most one.  Each class has a base colour; ``colour_contrast`` scales its
    distance from mid-grey (0 removes the colour cue, 1 is the full palette).
    The output depends only on the arguments.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    classes = tuple(classes)
    if not classes:
        raise ValueError("need at least one class")
    if n < len(classes):
        raise ValueError(f"n ({n}) must be >= number of classes ({len(classes)})")
    if not 0.0 <= noise <= 0.3:
        raise ValueError(f"noise must lie in [0, 0.3], got {noise}")
    if not 0.0 <= colour_contrast <= 1.0:
        raise ValueError(f"colour_contrast must lie in [0, 1], got {colour_contrast}")
    h, w = size
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % len(classes)
    rng.shuffle(labels)
    out = []
    for label in labels:
        kind = classes[int(label)]
        while True:
            r = rng.uniform(0.2, 0.34) * min(h, w)
            cy = rng.uniform(r, h - r)
            cx = rng.uniform(r, w - r)
            angle = rng.uniform(0, 2 * np.pi)
            mask = _shape_mask(kind, h, w, cy, cx, r, angle)
            if 0 < mask.sum() < h * w:
                break
        img = _background(rng, channels, h, w)
        colour = _class_colour(int(label), channels, colour_contrast) + rng.uniform(-0.12, 0.12, size=channels)
        img = np.where(mask[None], colour[:, None, None], img)
        img = img + noise * rng.standard_normal(img.shape)
        img = np.clip(img, 0.0, 1.0).astype(np.float32)
        out.append(Example(img, int(label), mask.astype(np.uint8)))
    return out


def gen_backgrounds(seed: int, n: int, noise: float = 0.1, size: tuple[int, int] = (32, 32), channels: int = 3) -> np.ndarray:
    """Shape-free images from the same background process, ``(n, C, H, W)``."""
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    h, w = size
    rng = np.random.default_rng(seed)
    out = np.empty((n, channels, h, w), dtype=np.float32)
    for i in range(n):
        img = _background(rng, channels, h, w) + noise * rng.standard_normal((channels, h, w))
        out[i] = np.clip(img, 0.0, 1.0)
    return out


def stack(examples: list[Example]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batch examples into ``(images N×C×H×W, labels N, masks N×H×W)``."""
    if not examples:
        raise ValueError("no examples to stack")
    images = np.stack([e.image for e in examples]).astype(np.float32)
    labels = np.array([e.label for e in examples], dtype=np.int64)
    masks = np.stack([e.mask for e in examples]).astype(np.uint8)
    return images, labels, masks
