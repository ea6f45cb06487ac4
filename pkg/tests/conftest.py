RESULTS: dict[int, str] = {}


def record(number: int, passed: bool, detail: str) -> bool:
    """Store and print the one-line verdict for an acceptance criterion."""
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    RESULTS[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[k])
