import os
import sys

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

from chinet.model import ChiNet, DenseCore, FactoredCore, init_chinet  # noqa: E402

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def random_net(rng, d_in=3, hidden=4, depth=2, n_classes=3, dense=False):
    net = init_chinet(d_in, hidden, depth, n_classes, rng)
    if dense:
        cores = [DenseCore(rng.normal(size=(c.out_dim, c.in_dim, c.in_dim)) / c.in_dim) for c in net.cores]
        net = net.with_cores(cores)
    return net


def random_widths_net(rng, d_max=8, h_max=16, depth_max=3, c_max=4):
    depth = int(rng.integers(1, depth_max + 1))
    d_in = int(rng.integers(1, d_max + 1))
    widths = [int(w) for w in rng.integers(1, h_max + 1, size=depth + 1)]
    n_classes = int(rng.integers(1, c_max + 1))
    return init_chinet(d_in, widths, depth, n_classes, rng)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: (int(k.rstrip("ab")), k)):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
