import numpy as np
import pytest

from ordnet.attention import AttentionParams


def make_params(c, cq, cv, seed, zero_bias=False):
    return AttentionParams.init(c, cq, cv, np.random.default_rng(seed), zero_bias=zero_bias)


@pytest.fixture
def params4():
    return make_params(4, 2, 3, seed=0)


_RESULTS = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(n, ok, detail)``, then assert ``ok``."""

    def record(n: int, ok: bool, detail: str) -> None:
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
        request.config.stash.setdefault(_RESULTS, []).append((n, line))
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_RESULTS, [])
    if results:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(results):
            terminalreporter.write_line(line)
