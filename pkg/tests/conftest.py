import sys

import numpy as np
import pytest

from tatd.model import FactorModel
from tatd.tensor_store import SparseTensor


def random_tensor(rng, dims, nnz, time_mode=0):
    """Random sparse tensor with ``nnz`` distinct cells."""
    cells = rng.choice(int(np.prod(dims)), size=nnz, replace=False)
    idx = np.stack(np.unravel_index(cells, dims), axis=1)
    return SparseTensor(idx, rng.normal(size=nnz), dims, time_mode)


def random_model(rng, dims, rank, time_mode=0):
    return FactorModel([rng.normal(size=(d, rank)) for d in dims], time_mode)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
