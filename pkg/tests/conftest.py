import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lesionaug.phantom import PhantomConfig, generate_phantom_dataset  # noqa: E402


@pytest.fixture(scope="session")
def small_phantom():
    """30 lesions, 10 per class, with shared patients."""
    return generate_phantom_dataset(PhantomConfig(n_per_class=(10, 10, 10), diameter_range=(10, 40), seed=3))


@pytest.fixture(scope="session")
def standard_phantom():
    return generate_phantom_dataset(PhantomConfig(separability=0.7, seed=0))


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    verdicts = getattr(acceptance, "VERDICTS", None)
    if verdicts:
        terminalreporter.section("acceptance criteria")
        for n in sorted(verdicts):
            terminalreporter.write_line(verdicts[n])
