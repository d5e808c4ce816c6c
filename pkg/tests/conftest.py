import pytest

_VERDICTS = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record an acceptance verdict; the end-of-run summary prints one line per criterion."""
    verdicts = request.config.stash.setdefault(_VERDICTS, {})

    def record(name: str, passed: bool, detail: str) -> bool:
        verdicts[name] = (passed, detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    verdicts = config.stash.get(_VERDICTS, None)
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(verdicts, key=lambda s: int(s.split()[0].lstrip("AC"))):
        passed, detail = verdicts[name]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
