import numpy as np
import pytest

from raids.config import SynthConfig
from raids.scenes import generate_dataset


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """A 12-record generated drive shared by read-only tests."""
    out = tmp_path_factory.mktemp("ds") / "day"
    return generate_dataset(12, SynthConfig(n=12, seed=3), out)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
