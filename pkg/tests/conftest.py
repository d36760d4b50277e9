import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from flarebo.imagecore import srgb8  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_rgb(rng, h=32, w=32, lo=0, hi=256):
    return srgb8(rng.integers(lo, hi, size=(h, w, 3)))


def textured_pair(seed, h=48, w=64, dark=0.18, noise=6.0, cast=(1.0, 0.85, 0.7)):
    """A bright reference texture and a dark, noisy, colour-cast version of it."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w]
    base = 0.5 + 0.25 * np.sin(xx / 4.0 + seed) * np.cos(yy / 5.0)
    blocks = ((xx // 12 + yy // 10) % 2) * 0.2
    ref = np.stack([base + blocks, base * 0.9 + 0.05, base * 0.8 + blocks * 0.5], axis=-1)
    ref = np.clip(ref * 220 + rng.normal(0, 3, ref.shape), 0, 255).round()
    illum = dark * (0.6 + 0.4 * xx / w)[..., None]
    low = ref * illum * np.array(cast) + rng.normal(0, noise, ref.shape)
    low = np.clip(low, 0, 255).round()
    return srgb8(low), srgb8(ref)


# --- acceptance verdict lines -------------------------------------------------------

ACCEPTANCE_LINES = []


class _Verdict:
    def __init__(self, name):
        self.name = name
        self.recorded = False

    def __call__(self, ok, detail=""):
        self.recorded = True
        ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {self.name}: {detail}")
        return ok

    def skip(self, reason):
        self.recorded = True
        ACCEPTANCE_LINES.append(f"SKIP  {self.name}: {reason}")
        pytest.skip(reason)


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion; printed after the run."""
    v = _Verdict(request.node.get_closest_marker("criterion").args[0])
    yield v
    if not v.recorded:
        ACCEPTANCE_LINES.append(f"FAIL  {v.name}: raised before reaching a verdict")


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
