import pytest

from opwatt.regress import cv as cv_module
from opwatt.regress import svr as svr_module

from helpers import kkt_violations

ACCEPTANCE: list[str] = []
SOLVES = {"checked": 0, "unconverged": 0}


@pytest.fixture(autouse=True)
def kkt_on_every_solve(monkeypatch):
    """Check the SVR dual KKT conditions on every converged SMO solve."""
    original = svr_module.solve_dual
    failures: list[str] = []

    def checked(K, y, C, epsilon, *args, **kwargs):
        sol = original(K, y, C, epsilon, *args, **kwargs)
        if sol.converged:
            SOLVES["checked"] += 1
            failures.extend(kkt_violations(K, y, C, epsilon, sol.beta, sol.bias))
        else:
            SOLVES["unconverged"] += 1
        return sol

    monkeypatch.setattr(svr_module, "solve_dual", checked)
    monkeypatch.setattr(cv_module, "solve_dual", checked)
    yield
    assert not failures, "KKT violations: " + "; ".join(failures[:5])


@pytest.fixture
def record_acceptance():
    def record(number: int, name: str, ok: bool, detail: str):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {name}: {detail}"
        ACCEPTANCE.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
    if SOLVES["checked"] or SOLVES["unconverged"]:
        terminalreporter.write_line(
            f"SVR KKT checked on {SOLVES['checked']} converged solves "
            f"({SOLVES['unconverged']} unconverged solves skipped)")
