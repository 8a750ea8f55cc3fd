import numpy as np
import pytest

from obctr.core import Document, GaussianFactor, HyperParams, TopicState


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_factor(rng, K, scale=1.0):
    return GaussianFactor(rng.normal(0, scale, K), rng.uniform(0.1, 2.0, K))


@pytest.fixture
def small_state():
    """K=3, D=3 topic table with a 4-token document whose counts are included."""
    hp = HyperParams(K=3, alpha=0.4, beta=0.1, sigma_eps2=0.5)
    topics = TopicState(3, 3, hp.beta, [[3, 1, 0], [0, 2, 4], [1, 0, 5]])
    doc = Document.from_assignments(7, [0, 2, 1, 2], [0, 1, 1, 2], 3)
    v = GaussianFactor([0.3, -0.2, 0.9], [1.0, 1.0, 1.0])
    return hp, topics, doc, v


# One line per acceptance criterion, echoed again at the end of the run.
VERDICTS: list[str] = []


def verdict(number: int, ok: bool, detail: str) -> bool:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
    VERDICTS.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
