import pytest

from rmflab.sieve import build_factor_table

ACCEPTANCE_LINES: dict[str, str] = {}


@pytest.fixture(scope="session")
def t_small():
    return build_factor_table(10**5)


@pytest.fixture(scope="session")
def t_big():
    return build_factor_table(10**6)


@pytest.fixture(scope="session")
def t_huge():
    return build_factor_table(10**7)


@pytest.fixture
def record():
    """Record one acceptance verdict; printed in the terminal summary."""

    def _record(label, ok: bool, text: str) -> None:
        label = str(label)
        line = f"criterion {label:>3}: {'PASS' if ok else 'FAIL'}  {text}"
        ACCEPTANCE_LINES[label] = line
        print(line)

    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES, key=lambda s: (int(s.rstrip('ab')), s)):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
