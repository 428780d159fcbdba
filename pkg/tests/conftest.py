import pytest

_RESULTS = {}


@pytest.fixture
def record():
    """Store a one-line verdict for the acceptance summary."""

    def _record(key, ok, detail):
        _RESULTS[key] = (bool(ok), detail)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_RESULTS, key=lambda k: int(k[1:])):
        ok, detail = _RESULTS[key]
        terminalreporter.write_line(f"{key} {'PASS' if ok else 'FAIL'}: {detail}")
