import numpy as np
import pytest

# criterion id -> (passed, detail); filled by the acceptance tests, printed at the end of the run
ACCEPTANCE: dict = {}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def criterion():
    """``criterion(cid, ok, detail)`` records one acceptance verdict and prints it."""
    def record(cid: int, ok: bool, detail: str):
        ACCEPTANCE[cid] = (bool(ok), detail)
        print(f"criterion {cid:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for cid in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"criterion {cid:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
