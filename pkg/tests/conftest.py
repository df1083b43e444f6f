import pytest

# (criterion, description, outcome, detail) rows filled in by test_acceptance
ACCEPTANCE_RESULTS: list[tuple[int, str, str, str]] = []


def record(number: int, description: str, ok: bool, detail: str = "") -> None:
    ACCEPTANCE_RESULTS.append((number, description, "PASS" if ok else "FAIL", detail))


def record_skip(number: int, description: str, reason: str) -> None:
    ACCEPTANCE_RESULTS.append((number, description, "SKIP", reason))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, description, outcome, detail in sorted(ACCEPTANCE_RESULTS):
        line = f"[{outcome}] criterion {number}: {description}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))


@pytest.fixture
def toy_lh_rows():
    return [
        list("LLLHLHLHHH"),
        list("LHHLHLHLLH"),
        list("HHLHLLHLHH"),
        list("HHLLLHLLLH"),
    ]
