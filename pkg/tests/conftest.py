import os
import sys

import pytest
from hypothesis import HealthCheck, settings

from wpki import crypto
from wpki.authority import CAConfig, init_ca
from wpki.scenario import LoopbackPKI, SuiteOptions

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

NOW = 1_700_000_000


@pytest.fixture
def now():
    return NOW


@pytest.fixture(scope="session")
def session_keys():
    """A few key pairs per curve; key generation is the slow part of most tests."""
    return {
        crypto.CURVE_160: [crypto.generate_keypair(crypto.CURVE_160) for _ in range(4)],
        crypto.CURVE_P256: [crypto.generate_keypair(crypto.CURVE_P256) for _ in range(2)],
    }


@pytest.fixture
def ca(tmp_path):
    """A fresh CA with a local (file) repository; no network."""
    return init_ca(CAConfig(state_dir=tmp_path, repo_address=("127.0.0.1", 7002)), now=NOW)


@pytest.fixture
def pki(tmp_path):
    with LoopbackPKI(tmp_path, SuiteOptions()) as p:
        yield p


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[number])
