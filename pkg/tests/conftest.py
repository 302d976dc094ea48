import numpy as np
import pytest

from wvad.core import available_backends, use_backend
from wvad.dataset import CorpusSpec, synthesize_corpus
from wvad.model import WvadConfig


@pytest.fixture(params=available_backends())
def backend(request):
    """Run the test once per kernel implementation."""
    with use_backend(request.param):
        yield request.param


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_config():
    # reduced geometry keeps model-level tests fast
    return WvadConfig(encoder_channels=(4, 4, 2, 2), encoder_kernel=5, decoder_kernels=(5, 3, 1))


@pytest.fixture(scope="session")
def tiny_corpus():
    spec = CorpusSpec(n_utterances=8, duration=0.5)
    return synthesize_corpus(spec, seed=3)


# (criterion, passed, detail) rows appended by test_acceptance.py
ACCEPTANCE_RESULTS = []


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_RESULTS


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
