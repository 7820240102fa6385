import numpy as np
import pytest

from probsurv import kernels
from probsurv.dataio import SynthConfig, synth_generate

BACKENDS = sorted(kernels.available_backends())


@pytest.fixture(params=BACKENDS)
def backend(request):
    """Kernel implementation module, one run per available backend."""
    return kernels.available_backends()[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_synth():
    return synth_generate(SynthConfig(n=300, d=3, true_weights=[1.0, -1.0, 0.5], seed=3))


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
