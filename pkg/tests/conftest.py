import numpy as np
import pytest

from pemopt import manifolds as mf
from pemopt.manifolds import Kind, ManifoldSpec

ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(line)


def random_spec(rng, kind=None, max_rows=6, max_cols=4):
    kinds = list(Kind)
    kind = Kind(kind) if kind is not None else kinds[int(rng.integers(len(kinds)))]
    while True:
        a = int(rng.integers(1, max_rows + 1))
        b = int(rng.integers(1, max_cols + 1))
        if kind is Kind.SPHERE and a * b < 2:
            continue
        if kind is Kind.STIEFEL and a < b:
            continue
        return ManifoldSpec(kind, a, b)


def random_tangent(spec, p, rng, scale=1.0):
    v = mf.tangent_project(spec, p, rng.standard_normal(spec.shape))
    n = np.linalg.norm(v)
    return v * (scale / n) if n > 0 else v


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
