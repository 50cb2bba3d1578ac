import numpy as np
import pytest

from svhscore.synth import SynthConfig, render_sample


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def hand_sample():
    """One rendered right hand (index 0 of the default synthetic plan)."""
    return render_sample(SynthConfig(n_hands=2, n_feet=2), 0)


@pytest.fixture(scope="session")
def foot_sample():
    return render_sample(SynthConfig(n_hands=2, n_feet=2), 2)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance")
        for line in RESULTS:
            terminalreporter.write_line(line)
