import numpy as np
import pytest

from libsflow import spectra

_CRITERIA = []


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(_CRITERIA):
        terminalreporter.write_line(line)


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion and assert on it."""

    def record(number, name, ok, detail=""):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {name}  {detail}".rstrip()
        _CRITERIA.append(line)
        print(line)
        assert ok, line

    return record


@pytest.fixture(scope="session")
def tiny_cfg():
    return spectra.SynthConfig(n_samples=60, n_channels=120, lines_per_oxide=3, peak_width=4.0,
                               noise_sigma=0.02, seed=7)


@pytest.fixture(scope="session")
def tiny_data(tiny_cfg):
    return spectra.synth_dataset(tiny_cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
