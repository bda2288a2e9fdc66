import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from sst.domains import default_registry  # noqa: E402

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def registry():
    return default_registry()


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)
    yield


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """One 3-domain dataset (shared images), 40 samples, 32 train / 8 test."""
    from sst import synthgen
    root = tmp_path_factory.mktemp("corpus") / "d"
    synthgen.generate_dataset(synthgen.GenConfig(str(root), count=40, seed=5))
    return root


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
