import numpy as np
import pytest

from tasif.model import ModelConfig, TasifModel, VocabSizes
from tasif.pipeline import SequenceBatch


def toy_batch(rng, b=3, n=8, n_items=12, attr_sizes=(3, 4), widths=(1, 2), n_tokens=5,
              min_len=1, lengths=None):
    """A random left-padded batch built directly, without a dataset."""
    if lengths is None:
        lengths = rng.integers(min_len, n + 1, size=b)
    pad = np.zeros((b, n), dtype=bool)
    for row, length in enumerate(lengths):
        pad[row, n - length:] = True
    items = np.where(pad, rng.integers(1, n_items + 1, size=(b, n)), 0)
    tokens = np.where(pad, np.sort(rng.integers(1, n_tokens + 1, size=(b, n)), axis=1), 0)
    attrs, masks, targets_attr = [], [], []
    for size, width in zip(attr_sizes, widths):
        vals = rng.integers(1, size + 1, size=(b, n, width))
        if width > 1:  # drop some trailing values so value-set sizes vary
            drop = rng.random((b, n, width)) < 0.4
            drop[..., 0] = False
            vals = np.where(drop, 0, vals)
        vals = np.where(pad[..., None], vals, 0)
        attrs.append(vals)
        masks.append(vals > 0)
        hot = (rng.random((b, size)) < 0.4).astype(float)
        hot[np.arange(b), rng.integers(0, size, size=b)] = 1.0
        targets_attr.append(hot)
    target = rng.integers(1, n_items + 1, size=b)
    return SequenceBatch(items, tokens, attrs, masks, pad, target, targets_attr,
                         np.arange(b), np.arange(b))


def toy_model(seed=0, n_items=12, attr_sizes=(3, 4), n_tokens=5, **cfg):
    defaults = dict(d=8, n=8, L=2, heads=2, dropout_rate=0.0)
    defaults.update(cfg)
    return TasifModel(ModelConfig(**defaults), VocabSizes(n_items, tuple(attr_sizes), n_tokens), seed=seed)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_CRITERIA = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record one acceptance line; the session summary prints them in order."""
    lines = request.config.stash.setdefault(_CRITERIA, {})

    def record(number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        lines[number] = line
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_CRITERIA, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
