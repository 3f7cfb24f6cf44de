import pytest

import helpers
from markovmask import build_chutes_chain, classify_states, setup

_CRITERIA: list[tuple[str, bool, str]] = []


class _Criterion:
    def __init__(self, name):
        self.name = name
        self.detail = ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        ok = exc_type is None
        reason = str(exc).strip().splitlines()[0] if exc is not None and str(exc).strip() else ""
        detail = self.detail if ok else f"{self.detail} {exc_type.__name__}: {reason}"
        _CRITERIA.append((self.name, ok, detail.strip()))
        return False


@pytest.fixture
def criterion():
    """Context manager recording one acceptance line, pass or fail."""
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _CRITERIA:
        line = f"{'PASS' if ok else 'FAIL'}  {name}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)


@pytest.fixture
def chain_c1():
    return helpers.c1()


@pytest.fixture
def chain_c2():
    return helpers.c2()


@pytest.fixture
def chain_c5():
    return helpers.c5()


@pytest.fixture
def chain_cycle2():
    return helpers.cycle2()


@pytest.fixture(scope="session")
def chutes_1p():
    return build_chutes_chain(players=1)


@pytest.fixture(scope="session")
def chutes_2p():
    """Two-player model with its setup, built once per session."""
    import time
    model = build_chutes_chain(players=2)
    t0 = time.perf_counter()
    cache = setup(model.chain, model.classification, model.mu)
    return model, cache, time.perf_counter() - t0
