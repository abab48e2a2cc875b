import contextlib

ACCEPTANCE: dict[int, tuple[str, str]] = {}


@contextlib.contextmanager
def criterion(number: int, title: str):
    """Record and print a pass/fail line for one acceptance criterion."""
    try:
        yield
    except BaseException:
        ACCEPTANCE[number] = ("FAIL", title)
        print(f"FAIL  criterion {number:2d}: {title}")
        raise
    ACCEPTANCE[number] = ("PASS", title)
    print(f"PASS  criterion {number:2d}: {title}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, title = ACCEPTANCE[n]
        terminalreporter.write_line(f"{status}  criterion {n:2d}: {title}")
