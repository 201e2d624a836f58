import pytest

# (criterion number, passed, detail) rows filled in by test_acceptance.py
ACCEPTANCE: list[tuple[int, bool | None, str]] = []


@pytest.fixture
def criterion():
    def record(number: int, ok: bool | None, detail: str) -> None:
        ACCEPTANCE.append((number, ok, detail))
        status = "INFO" if ok is None else ("PASS" if ok else "FAIL")
        print(f"criterion {number}: {status} {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        status = "INFO" if ok is None else ("PASS" if ok else "FAIL")
        terminalreporter.write_line(f"criterion {number:>2}: {status}  {detail}")
