import pytest

_RESULTS: dict[int, list[tuple[str, bool, str]]] = {}


@pytest.fixture
def acceptance():
    """Record one acceptance check: acceptance(number, title, ok, detail)."""
    def record(number, title, ok, detail=""):
        _RESULTS.setdefault(number, []).append((title, bool(ok), detail))
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_RESULTS):
        parts = _RESULTS[n]
        status = "PASS" if all(ok for _, ok, _ in parts) else "FAIL"
        tr.write_line(f"[{n:2d}] {status}  " + "; ".join(
            f"{t} {'ok' if ok else 'FAILED'} ({d})" if d else f"{t} {'ok' if ok else 'FAILED'}"
            for t, ok, d in parts))
