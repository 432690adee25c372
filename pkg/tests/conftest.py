"""Shared pytest hooks: the acceptance suite's one-line-per-criterion summary."""

CRITERIA = {}


def record_criterion(number: int, title: str, ok: bool, detail: str = ""):
    """Store (and print) one acceptance verdict; the terminal summary repeats them in order."""
    line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}" + (f": {detail}" if detail else "")
    CRITERIA[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[k])
