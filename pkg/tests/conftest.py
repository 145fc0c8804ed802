import functools

import pytest

from baqudit.atomic_structure import build_transitions
from baqudit.noise import NoiseParams
from baqudit.state_selection import select_encoding

B_OP = 4.209


@functools.lru_cache(maxsize=None)
def _transitions():
    return tuple(build_transitions(B_OP))


@functools.lru_cache(maxsize=None)
def encoding(d: int, hub_index: int = 0):
    return select_encoding(d, _transitions(), NoiseParams(), hub_index=hub_index, B_G=B_OP)


@pytest.fixture(scope="session")
def transitions():
    return list(_transitions())


@pytest.fixture(scope="session")
def table1():
    return NoiseParams()


@pytest.fixture(scope="session")
def noiseless():
    return NoiseParams.noiseless()


# acceptance criterion -> (passed, detail); printed after the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
