import numpy as np
import pytest

from attnrobust.data import SHAPE_KINDS, gen_synthetic, stack
from attnrobust.encoders import EncoderConfig, PromptSet, make_model, original_and_target

# acceptance lines collected by tests/test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


TINY = dict(height=16, width=16, patch=4, dim=12, blocks=1)


@pytest.fixture
def prompts():
    return PromptSet.from_classes(SHAPE_KINDS)


@pytest.fixture
def tiny_model(prompts):
    return make_model(EncoderConfig(**TINY, seed=3), prompts)


@pytest.fixture
def tiny_pair(tiny_model):
    """(original, target) with a nudged target so the two disagree."""
    original, target = original_and_target(tiny_model)
    rng = np.random.default_rng(4)
    for p in target.trainable().values():
        p.data = (p.data + 0.05 * rng.normal(size=p.data.shape)).astype(np.float32)
    return original, target


@pytest.fixture
def tiny_batch():
    x, y, masks = stack(gen_synthetic(5, 6, size=(16, 16)))
    return x, y, masks


@pytest.fixture(scope="session")
def report_line():
    """Record one acceptance line; echoed in the terminal summary."""
    def record(line: str) -> None:
        print(line)
        ACCEPTANCE_LINES.append(line)

    return record
