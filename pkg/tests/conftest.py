import pytest

from secnpu.network import parse_network

TINY = """
name: tiny
layers:
  - {name: conv1, kind: conv, shape: {K: 4, C: 2, H: 8, W: 16, R: 3, S: 3}, row: conv-ir-1, tiles: {H_T: 4, W_T: 16}}
  - {name: conv2, kind: conv, shape: {K: 4, C: 4, H: 8, W: 16}, row: conv-or-2, tiles: {K_T: 2, C_T: 2, H_T: 4, W_T: 16}}
  - {name: pool, kind: pool, shape: {K: 4, C: 4, H: 8, W: 16, R: 3, S: 3}, row: s1-4, tiles: {K_T: 2, H_T: 4, W_T: 16}}
  - {name: fc, kind: matmul, shape: {H: 4, C: 128, W: 16}, row: mm-1, tiles: {H_T: 2, C_T: 64, W_T: 16}}
"""

_criteria: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def tiny_net():
    return parse_network(TINY, "tiny.yaml")


@pytest.fixture
def record_criterion():
    """Acceptance tests report ``(number, passed, detail)``; printed at session end."""
    def record(number: int, passed: bool, detail: str) -> None:
        _criteria[number] = (bool(passed), detail)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        ok, detail = _criteria[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
