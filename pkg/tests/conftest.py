import numpy as np
import pytest

from gapfill.signal import AudioBuffer, SegmentSpec, split_segment


def multitone(n: int, rng: np.random.Generator, k: int = 3, fs: int = 16000) -> np.ndarray:
    t = np.arange(n) / fs
    return sum(rng.uniform(0.1, 0.5) * np.sin(2 * np.pi * rng.uniform(100, 4000) * t
                                             + rng.uniform(0, 2 * np.pi)) for _ in range(k))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def spec():
    return SegmentSpec()


@pytest.fixture
def noisy_segment(rng, spec):
    x = multitone(spec.total_len, rng) + 0.01 * rng.standard_normal(spec.total_len)
    return split_segment(AudioBuffer(x), spec)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
