import numpy as np
import pytest

from sofa.core import WorkloadSpec, generate_workload


@pytest.fixture(scope="session")
def small_workload():
    return generate_workload(WorkloadSpec(seq_len=128, head_dim=32, num_queries=16, seed=7))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
