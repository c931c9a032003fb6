import functools

import numpy as np
import pytest

from gatpf.case import load_bundled
from gatpf.datagen import SamplerConfig, generate_dataset

ACCEPTANCE_KEY = pytest.StashKey[list]()


@functools.lru_cache(maxsize=None)
def bundled(name):
    return load_bundled(name)


@functools.lru_cache(maxsize=None)
def small_dataset(name="case9", variants=1, instances=40, seed=0):
    return generate_dataset(bundled(name), variants, instances, SamplerConfig(seed=seed))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion for the terminal summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def record(number, title, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}" + (f" ({detail})" if detail else "")
        lines.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines, key=lambda x: str(x[0])):
            terminalreporter.write_line(line)
