import contextlib
import time

_RESULTS: list[tuple[str, bool, str]] = []


class Criterion:
    def __init__(self, name: str):
        self.name = name
        self.detail = ""


@contextlib.contextmanager
def criterion(name: str):
    """Record one acceptance criterion as PASS or FAIL, re-raising failures."""
    c = Criterion(name)
    t0 = time.perf_counter()
    try:
        yield c
    except BaseException as exc:
        _RESULTS.append((name, False, f"{c.detail} [{type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}]"))
        raise
    else:
        _RESULTS.append((name, True, c.detail or f"{time.perf_counter() - t0:.1f}s"))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
