from pathlib import Path

import numpy as np
import pytest

from huffval.huff import CellModelInputs

ACCEPTANCE_LINES: list[str] = []


def direct_probabilities(a, d, alpha, beta):
    """Plain power-law choice probabilities, written without log-space tricks."""
    h = np.power(a[None, :], alpha) / np.power(d, beta)
    return h / h.sum(axis=1, keepdims=True)


def synthetic_cell(seed, n_customers=500, n_merchants=20, params=(1.0, 2.0), visits=60,
                   extent_km=8.0):
    """Cell with planar customer/merchant positions and multinomial visits.

    Returns (inputs, true probability matrix).
    """
    rng = np.random.default_rng(seed)
    cust = rng.uniform(0, extent_km, (n_customers, 2))
    merch = rng.uniform(0, extent_km, (n_merchants, 2))
    d = np.maximum(np.linalg.norm(cust[:, None, :] - merch[None, :, :], axis=2), 0.05)
    a = rng.lognormal(11.0, 1.0, n_merchants)
    p = direct_probabilities(a, d, *params)
    counts = np.vstack([rng.multinomial(visits, row) for row in p])
    return CellModelInputs(a, d, counts, "d0", "c0"), p


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(label: str, passed: bool, detail: str = "") -> bool:
        line = f"{label}: {'PASS' if passed else 'FAIL'}" + (f" ({detail})" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


GOLDEN = Path(__file__).parent / "golden"


def layout_mismatches(out) -> list[str]:
    """Compare emitted table layouts in ``out`` against the golden headers."""
    out = Path(out)
    problems = []

    def first_line(path):
        return path.read_text().splitlines()[0]

    expected_fields = (GOLDEN / "table1_summary_fields.txt").read_text().splitlines()
    summary = (out / "summary.csv").read_text().splitlines()
    got_fields = [summary[0].split(",")[0]] + [line.split(",")[0] for line in summary[1:]]
    if got_fields != expected_fields:
        problems.append(f"summary.csv fields {got_fields}")
    for name, golden in (("performance_summary.csv", "table3_performance_header.csv"),
                         ("fits.csv", "appendix_fits_header.csv"),
                         ("adjusted_r2.csv", "table4_adjusted_r2_header.csv")):
        if (out / name).exists() and first_line(out / name) != first_line(GOLDEN / golden):
            problems.append(f"{name} header {first_line(out / name)!r}")
        elif not (out / name).exists():
            problems.append(f"{name} missing")
    cols = first_line(GOLDEN / "table5_header.txt").split("|")
    tables = (out / "regression_tables.txt").read_text() if (out / "regression_tables.txt").exists() else ""
    headers = [line for line in tables.splitlines() if line.startswith(cols[0])]
    if not headers or any([c.strip() for c in h.split("  ") if c.strip()] != cols for h in headers):
        problems.append("regression table header")
    return problems
