import numpy as np
import pytest

from attnrobust.data import SHAPE_KINDS, Example, _class_colour, gen_backgrounds, gen_synthetic, stack


def test_same_seed_is_byte_identical():
    a, b = gen_synthetic(11, 20), gen_synthetic(11, 20)
    for ea, eb in zip(a, b):
        assert ea.image.tobytes() == eb.image.tobytes()
        assert ea.mask.tobytes() == eb.mask.tobytes()
        assert ea.label == eb.label


def test_different_seeds_differ():
    a, b = gen_synthetic(1, 8), gen_synthetic(2, 8)
    assert any(ea.image.tobytes() != eb.image.tobytes() for ea, eb in zip(a, b))


def test_balanced_classes():
    labels = np.array([e.label for e in gen_synthetic(0, 400)])
    np.testing.assert_array_equal(np.bincount(labels), [100] * 4)


def test_uneven_n_balances_up_to_rounding():
    counts = np.bincount([e.label for e in gen_synthetic(0, 10)], minlength=4)
    assert counts.max() - counts.min() <= 1


def test_masks_are_proper_subsets():
    data = gen_synthetic(3, 200)
    for e in data:
        assert 1 <= int(e.mask.sum()) <= e.mask.size - 1
        assert e.mask.dtype == np.uint8
        assert e.image.dtype == np.float32
        assert e.image.min() >= 0 and e.image.max() <= 1


def test_foreground_carries_class_colour():
    # without pixel noise the foreground sits within jitter of the class colour
    for e in gen_synthetic(4, 12, noise=0.0):
        fg = e.image[:, e.mask.astype(bool)]
        base = _class_colour(e.label, 3, 0.7)
        assert np.all(np.abs(fg.mean(axis=1) - base) <= 0.12 + 1e-6)


def test_colour_contrast_endpoints():
    np.testing.assert_allclose(_class_colour(2, 3, 0.0), 0.5)
    np.testing.assert_allclose(_class_colour(0, 3, 1.0), [0.95, 0.2, 0.2])
    assert _class_colour(5, 1).shape == (1,)


@pytest.mark.parametrize("kwargs,match", [
    (dict(n=0), "n must be"),
    (dict(n=3), "number of classes"),
    (dict(n=8, noise=0.5), "noise"),
    (dict(n=8, colour_contrast=1.5), "colour_contrast"),
    (dict(n=8, classes=("disk", "blob")), "unknown shape"),
])
def test_generator_rejects_bad_arguments(kwargs, match):
    with pytest.raises(ValueError, match=match):
        gen_synthetic(0, **kwargs)


def test_custom_size_and_channels():
    e = gen_synthetic(0, 4, classes=SHAPE_KINDS[:2], size=(8, 12), channels=1)[0]
    assert e.image.shape == (1, 8, 12) and e.mask.shape == (8, 12)


def test_backgrounds():
    bg = gen_backgrounds(0, 5)
    assert bg.shape == (5, 3, 32, 32) and bg.dtype == np.float32
    assert bg.min() >= 0 and bg.max() <= 1
    assert gen_backgrounds(0, 0).shape == (0, 3, 32, 32)
    np.testing.assert_array_equal(gen_backgrounds(9, 2), gen_backgrounds(9, 2))


def test_example_validation():
    img = np.zeros((3, 2, 2), dtype=np.float32)
    with pytest.raises(ValueError, match="at least one"):
        Example(img, 0, np.zeros((2, 2), dtype=np.uint8))
    with pytest.raises(ValueError, match="uint8"):
        Example(img, 0, np.full((2, 2), 2, dtype=np.uint8))


def test_stack():
    x, y, m = stack(gen_synthetic(0, 6))
    assert x.shape == (6, 3, 32, 32) and y.shape == (6,) and m.shape == (6, 32, 32)
    with pytest.raises(ValueError):
        stack([])
