import pytest

VERDICTS: list[tuple[str, bool, str]] = []


@pytest.fixture
def verdict(request):
    """Record and print one PASS/FAIL line, then assert."""
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")

    def record(name: str, ok: bool, detail: str):
        VERDICTS.append((name, ok, detail))
        if reporter is not None:
            reporter.write_line(f"\n{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        assert ok, f"{name}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for name, ok, detail in VERDICTS:
            terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
