import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from artifact.potential import from_spec

settings.register_profile("artifact", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("artifact")

# bundled smooth test pair: same support, equal means
PAIR_Q1 = "bump(0.5,0.5,0.3)"
PAIR_Q2 = "bump(0.5,0.5,0.3) + bump(0.1,0.6,0.1) - bump(0.1,0.4,0.1)"

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def pair200():
    return from_spec(PAIR_Q1, 1.0, 200), from_spec(PAIR_Q2, 1.0, 200)


def random_smooth_pair(rng: np.random.Generator, n: int = 200):
    """Two sums of bumps on [0, 1] with moderate L1 norms."""
    def one():
        terms = []
        for _ in range(rng.integers(1, 4)):
            w = rng.uniform(0.1, 0.3)
            c = rng.uniform(w, 1 - w)
            amp = rng.uniform(-1.0, 1.0)
            terms.append(f"bump({amp:.6f},{c:.6f},{w:.6f})")
        return from_spec(" + ".join(terms), 1.0, n)
    return one(), one()
