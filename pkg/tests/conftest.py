"""Shared pytest plumbing: the acceptance verdict registry and its terminal summary."""

ACCEPTANCE = {}


def record(name, passed, detail=""):
    """Register one acceptance verdict; the last record for a name wins."""
    ACCEPTANCE[name] = (bool(passed), detail)
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, (ok, detail) in ACCEPTANCE.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
