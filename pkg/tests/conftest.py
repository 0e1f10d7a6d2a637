import numpy as np
import pytest

from freqsplat.field import SplatField


def random_field(rng, n, h, w, c=3, scale=(0.6, 1.4), opacity=(0.3, 0.9)):
    """Moderately sized, mostly on-canvas splats with colors strictly inside (0, 1)."""
    p = rng.uniform(*opacity, size=n)
    return SplatField(
        canvas=(h, w, c),
        pos=rng.uniform([1.0, 1.0], [w - 1.0, h - 1.0], size=(n, 2)),
        log_scale=rng.uniform(*scale, size=(n, 2)),
        rotation=rng.uniform(0, np.pi, size=n),
        opacity_logit=np.log(p / (1 - p)),
        color=rng.uniform(0.1, 0.9, size=(n, c)),
        depth=rng.uniform(0, 1, size=n),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one (number, passed, detail) entry per acceptance criterion run this session
ACCEPTANCE_RESULTS = []


def record_criterion(number, passed, detail):
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_RESULTS.append((number, passed, line))
    print(line, flush=True)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for _, _, line in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(line)
