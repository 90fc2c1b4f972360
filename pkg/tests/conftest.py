import numpy as np
import pytest

from scbct.volgrid import Mask3, Volume3


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_volume(rng, shape=(8, 8, 8), spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
    return Volume3(rng.random(shape).astype(np.float32), spacing, origin)


def random_mask(rng, shape=(8, 8, 8), p=0.4, spacing=(1.0, 1.0, 1.0)):
    return Mask3((rng.random(shape) < p).astype(np.uint8), spacing)


def ball(shape, center, radius, spacing=(1.0, 1.0, 1.0)):
    idx = np.indices(shape).astype(float)
    d2 = sum(((idx[a] - center[a]) * spacing[a]) ** 2 for a in range(3))
    return Mask3((d2 <= radius ** 2).astype(np.uint8), spacing)


# acceptance verdicts, printed once at the end of the session
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {title}: {detail}")
