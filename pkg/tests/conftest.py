"""Collects one verdict per acceptance criterion and prints them after the run."""

import pytest

CRITERIA = {
    1: "maxent numeric vs analytic kernel",
    2: "rescaling symmetry of the kernel",
    3: "norm and Hamiltonian conservation",
    4: "quantum-class analytic oracles",
    5: "walker marginals track rho for every epsilon",
    6: "Bohmian limit exponent and seed independence",
    7: "hybrid class follows classical flow",
    8: "uncertainty relations on recorded states",
    9: "quadratic variation of walker paths",
}

_verdicts: dict[int, list[tuple[str, bool, str]]] = {}


@pytest.fixture
def verdict():
    """``verdict(criterion, label, passed, detail)`` records a result and returns ``passed``."""

    def record(criterion: int, label: str, passed: bool, detail: str = "") -> bool:
        _verdicts.setdefault(criterion, []).append((label, bool(passed), detail))
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n, title in CRITERIA.items():
        rows = _verdicts.get(n)
        if not rows:
            tr.write_line(f"criterion {n}: NOT RUN  {title}")
            continue
        ok = all(p for _, p, _ in rows)
        detail = "; ".join(f"{label}: {d}" if d else label for label, _, d in rows)
        tr.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {title}  [{detail}]")
