import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


def pytest_addoption(parser):
    parser.addoption(
        "--long-run", action="store_true", default=False,
        help="run full-scale Monte Carlo (N_w = 524288) checks",
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--long-run"):
        return
    skip = pytest.mark.skip(reason="needs --long-run")
    for item in items:
        if "longrun" in item.keywords:
            item.add_marker(skip)
