"""Shared pytest plumbing: collect acceptance lines for the run summary."""

criterion_lines = []


def record(name: str, ok: bool, detail: str) -> bool:
    """Stash one pass/fail line; echoed again in the terminal summary."""
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    criterion_lines.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if criterion_lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in criterion_lines:
            terminalreporter.write_line(line)
