import functools

RESULTS = {}


def criterion(number, title):
    """Record a PASS/FAIL line for an acceptance test, failing on any exception."""
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            RESULTS[number] = (title, False, "raised")
            detail = fn(*args, **kwargs)
            RESULTS[number] = (title, True, detail or "")
        return run
    return wrap


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(RESULTS):
        title, ok, detail = RESULTS[num]
        line = f"criterion {num:>2} {'PASS' if ok else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
