import numpy as np
import pytest

from localeq.config import bench_config
from localeq.synthgen import WorldSpec, generate, split_world

TINY_SPEC = dict(n_locales=4, n_pts=20, n_items_per_pt=3, n_templates=200, lore_queries=40, size_ratio=10,
                 vocab_size=400, hi_re_fraction=0.5, dialect_templates_per_pt=4, flip_fraction=0.05,
                 selection_fraction=0.1, seed=3)


@pytest.fixture(scope="session")
def tiny_world():
    return generate(WorldSpec(**TINY_SPEC))


@pytest.fixture(scope="session")
def tiny_split(tiny_world):
    return split_world(tiny_world, (0.8, 0.1, 0.1), 3)


@pytest.fixture(scope="session")
def bench_world():
    """The shipped benchmark world (seed 7)."""
    return generate(bench_config().world)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = []  # (criterion number, passed, detail)


def verdict(n: int, ok: bool, detail: str):
    ACCEPTANCE.append((n, bool(ok), detail))
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, detail


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
