import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from a2clnet.model import ArchitectureConfig  # noqa: E402
from a2clnet.tensor import Rng  # noqa: E402


def tiny_architecture(**overrides):
    base = dict(lookback_window=6, input_features=1, conv_filters=2, conv_kernel=3,
                lstm1_hidden=2, lstm2_hidden=2, lstm3_hidden=2, attn_heads=2, attn_key_dim=2,
                dropout_rate=0.2)
    base.update(overrides)
    return ArchitectureConfig(**base)


def small_architecture(**overrides):
    """Fast stand-in used wherever the default size would take too long."""
    base = dict(conv_filters=8, lstm1_hidden=8, lstm2_hidden=8, lstm3_hidden=8,
                attn_heads=2, attn_key_dim=4)
    base.update(overrides)
    return ArchitectureConfig(**base)


@pytest.fixture
def np_rng():
    return np.random.default_rng(12345)


@pytest.fixture
def rng():
    return Rng(7)


@pytest.fixture
def tiny_cfg():
    return tiny_architecture()


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = {}


def record_acceptance(number, title, passed, detail):
    line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
