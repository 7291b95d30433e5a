import numpy as np
import pytest

from radiant import metric_models as mm


@pytest.fixture(scope="session")
def minkowski():
    return mm.make_model("minkowski")


@pytest.fixture(scope="session")
def schwarzschild():
    return mm.make_model("schwarzschild_tail")


@pytest.fixture(scope="session")
def radiating():
    return mm.make_model("radiating")


@pytest.fixture
def rng():
    return np.random.default_rng(0)


_CRITERIA = pytest.StashKey[dict]()


class AcceptanceLog:
    """Clause outcomes per criterion; the terminal summary prints one line per criterion."""

    def __init__(self):
        self.rows: dict[int, list[tuple[str, bool, str]]] = {}

    def record(self, n: int, clause: str, passed: bool, detail: str = "") -> bool:
        self.rows.setdefault(n, []).append((clause, bool(passed), detail))
        return bool(passed)


@pytest.fixture(scope="session")
def acceptance(request):
    log = request.config.stash.setdefault(_CRITERIA, {})
    return log.setdefault("log", AcceptanceLog())


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    log = config.stash.get(_CRITERIA, {}).get("log")
    if not log or not log.rows:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(log.rows):
        clauses = log.rows[n]
        ok = all(p for _, p, _ in clauses)
        parts = "; ".join(f"{c}: {'ok' if p else 'FAIL'}{' (' + d + ')' if d else ''}" for c, p, d in clauses)
        terminalreporter.write_line(f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {parts}")
