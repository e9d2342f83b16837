import pytest

_LINES = []


@pytest.fixture
def acceptance(request):
    """Collect one pass/fail line per acceptance test for the terminal summary."""
    state = {"line": None}

    def record(label, ok, detail=""):
        status = "PASS" if ok else "FAIL"
        state["line"] = f"{label}: {status}" + (f" ({detail})" if detail else "")
        print(state["line"])
        return ok

    yield record
    if state["line"] is None:
        state["line"] = f"{request.node.name}: FAIL (errored before evaluation)"
    _LINES.append(state["line"])


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
