import numpy as np
import pytest


def random_hermitian(rng, d):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return 0.5 * (a + a.conj().T)


def random_dm(rng, d, rank=None):
    rank = d if rank is None else rank
    g = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def random_ket(rng, d):
    v = rng.normal(size=d) + 1j * rng.normal(size=d)
    return v / np.linalg.norm(v)


def trace_norm(a):
    return float(np.abs(np.linalg.eigvalsh(0.5 * (a + a.conj().T))).sum())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


CRITERIA_LINES = []


def report_criterion(number, title, ok, detail=""):
    """Print and record one PASS/FAIL line for an acceptance criterion."""
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {title}" + (f" [{detail}]" if detail else "")
    CRITERIA_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA_LINES:
            terminalreporter.write_line(line)
