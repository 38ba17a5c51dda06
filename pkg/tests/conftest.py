import os

import numpy as np
import pytest

from edgesync.config import load_config
from edgesync.pipeline import pretrained_student

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
SPECS = os.path.join(ROOT, "specs")

# criterion number -> (passed, detail); filled by test_acceptance.py
CRITERIA: dict = {}


@pytest.fixture(scope="session")
def cfg():
    return load_config()


@pytest.fixture(scope="session")
def small_cfg():
    # 3 edges, short streams: quick simulations for invariant tests
    return load_config(overrides={"stream.num_edges": "3", "stream.duration": "300"})


@pytest.fixture(scope="session")
def pretrained(cfg):
    return pretrained_student(cfg, 1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
