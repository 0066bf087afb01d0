import numpy as np
import pytest

from onesided import DyadicGrid, GridFunction, Weight

# acceptance outcomes, one entry per (criterion, part), printed at session end
ACCEPTANCE: dict[int, list[tuple[str, bool, str]]] = {}


def record(criterion: int, part: str, passed: bool, detail: str = ""):
    ACCEPTANCE.setdefault(criterion, []).append((part, bool(passed), detail))
    print(f"criterion {criterion} [{part}]: {'PASS' if passed else 'FAIL'} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[c]
        ok = all(p[1] for p in parts)
        detail = "; ".join(f"{name}: {'ok' if good else 'FAILED'} {d}".strip() for name, good, d in parts)
        terminalreporter.write_line(f"criterion {c:2d}: {'PASS' if ok else 'FAIL'} | {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_weight(depth: int, rng, p: float = 2.0, spread: float = 2.0) -> Weight:
    grid = DyadicGrid(depth)
    return Weight(GridFunction(grid, np.exp(spread * rng.standard_normal(grid.n))), p)
