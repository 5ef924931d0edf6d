import pytest

from simbridge.datasets import load_dataset
from simbridge.simulator import DatasetSpec, generate_dataset, real_domain, sim_domain

# criterion number -> one-line verdict, filled in by test_acceptance.py
ACCEPTANCE_LINES: dict = {}


@pytest.fixture(scope="session")
def small_data(tmp_path_factory):
    """20 pseudo-real and 10 sim scenes, shared by the training tests."""
    root = tmp_path_factory.mktemp("small")
    generate_dataset(root / "real", 20, DatasetSpec(real_domain()), 500)
    generate_dataset(root / "sim", 10, DatasetSpec(sim_domain()), 900)
    return load_dataset(root / "real"), load_dataset(root / "sim")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
