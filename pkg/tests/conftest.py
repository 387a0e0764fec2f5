"""Shared fixtures and the acceptance-report summary hook."""

from __future__ import annotations

import pytest

import fptmc

# (criterion label, passed, detail) rows recorded by tests/test_acceptance.py
ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def record_criterion(label: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS.append((label, ok, detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for label, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")


SEED = 20260808


@pytest.fixture(scope="session")
def ou_model():
    return fptmc.build_model("-z", 1.0)


@pytest.fixture(scope="session")
def zero_model():
    return fptmc.build_model("0", 1.0)


@pytest.fixture(scope="session")
def big_ensemble():
    """The N=10^4, M=1000 ensemble shared by the desk-scale acceptance runs."""
    return fptmc.generate_ensemble(10000, 1000, SEED)


@pytest.fixture(scope="session")
def small_ensemble():
    return fptmc.generate_ensemble(500, 200, 5)
