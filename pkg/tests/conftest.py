import numpy as np
import pytest


def central_differences(f, arrays, h=1e-6):
    """Central-difference gradient of scalar ``f()`` w.r.t. each array, perturbed in place."""
    out = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + h
            fp = f()
            a[i] = old - h
            fm = f()
            a[i] = old
            g[i] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def assert_rel_close(analytic, numeric, rtol, scale=1.0, floor=1e-9):
    """``|a - n| <= rtol * max(|a|, |n|) + floor * scale`` on every coordinate.

    ``floor * scale`` covers floating-point cancellation in the difference
    quotient, which is proportional to the magnitude of the function value.
    """
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    bound = rtol * np.maximum(np.abs(a), np.abs(n)) + floor * scale
    bad = np.abs(a - n) > bound
    assert not bad.any(), f"max violation {np.max(np.abs(a - n) - bound)} at {np.argwhere(bad)[:5].tolist()}"


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# filled by test_acceptance.verdict; printed once per criterion after the run
ACCEPTANCE: dict = {}
CRITERIA = [f"A{i}" for i in range(1, 10)]


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for c in CRITERIA:
        if c in ACCEPTANCE:
            ok, detail = ACCEPTANCE[c]
            terminalreporter.write_line(f"{c} {'PASS' if ok else 'FAIL'}: {detail}")
        else:
            terminalreporter.write_line(f"{c} FAIL: not evaluated in this run")
