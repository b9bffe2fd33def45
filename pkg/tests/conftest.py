import pytest

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}
CRITERIA = 10


@pytest.fixture
def verdict(request):
    """Record one acceptance line: ``verdict(n, name, passed, detail)``."""

    def record(number: int, name: str, passed: bool, detail: str = "") -> None:
        ACCEPTANCE[number] = (bool(passed), f"{name}: {detail}" if detail else name)

    return record


def pytest_terminal_summary(terminalreporter):
    ran = any("test_acceptance" in r.nodeid for rs in terminalreporter.stats.values()
              for r in rs if hasattr(r, "nodeid"))
    if not ran:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, CRITERIA + 1):
        passed, text = ACCEPTANCE.get(n, (False, "did not run to completion"))
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {n:2d}. {text}")
