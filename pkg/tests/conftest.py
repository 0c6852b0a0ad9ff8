import sys

import pytest

from dwi.harness.config import DEFAULTS
from dwi.harness.pipeline import run_all

TINY = DEFAULTS.with_overrides(steps=40, n_train=24, n_val=12, n_proto=24, sweep_steps=3, kmeans_k=3)


@pytest.fixture(scope="session")
def tiny_cfg():
    return TINY


@pytest.fixture(scope="session")
def tiny_run(tmp_path_factory, tiny_cfg):
    """A full but very small pipeline run, shared by the harness tests."""
    out = tmp_path_factory.mktemp("tiny")
    reports = run_all(tiny_cfg, out)
    return out, reports


@pytest.fixture(scope="session")
def reference_run(tmp_path_factory):
    """The reference experiment (default config), run once per session."""
    out = tmp_path_factory.mktemp("reference")
    reports = run_all(DEFAULTS, out)
    return out, reports


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is not None and acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in acceptance.summary_lines():
            terminalreporter.write_line(line)
