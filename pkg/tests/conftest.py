import sys
from contextlib import contextmanager
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

ACCEPTANCE_LINES: list[str] = []


@contextmanager
def criterion(number: int, title: str):
    """Record a pass/fail line for an acceptance criterion; ``rec['detail']`` adds context."""
    rec = {"detail": ""}
    try:
        yield rec
    except BaseException as exc:
        detail = rec["detail"] or f"{type(exc).__name__}: {exc}".splitlines()[0]
        ACCEPTANCE_LINES.append(f"criterion {number:2d} FAIL  {title}  [{detail}]")
        raise
    ACCEPTANCE_LINES.append(f"criterion {number:2d} PASS  {title}  [{rec['detail']}]")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
