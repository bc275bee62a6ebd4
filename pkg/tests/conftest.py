import pytest

from gbmembed.distributions import TargetDistribution


@pytest.fixture
def uniform02():
    return TargetDistribution.uniform(0.0, 2.0)


@pytest.fixture
def coin02():
    return TargetDistribution.from_atoms([(0, 0.5), (2, 0.5)])


@pytest.fixture
def coin01():
    return TargetDistribution.from_atoms([(0, 0.5), (1, 0.5)])


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def accept():
    """Record one PASS/FAIL line for an acceptance criterion."""

    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])
