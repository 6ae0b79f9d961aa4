import sys

import numpy as np
import pytest

from transmuse.data import NodeDataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def write_csv_text(tmp_path):
    def _write(text, name="traffic.csv"):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return _write


def make_node(values, node_id="n0"):
    return NodeDataset(node_id, np.asarray(values, dtype=float).reshape(len(values), -1))


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
