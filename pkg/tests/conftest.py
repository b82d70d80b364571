import numpy as np
import pytest

from diffdcm.model import ModelParams

ACCEPTANCE_LINES: list[str] = []


def assert_grad_close(analytic, numeric, rel=1e-5, floor=1e-8):
    """|a - f| <= max(rel * |f|, floor), elementwise."""
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    tol = np.maximum(rel * np.abs(numeric), floor)
    bad = np.abs(analytic - numeric) > tol
    assert not bad.any(), f"max excess {np.max(np.abs(analytic - numeric) - tol):.3g} at {np.argwhere(bad)[:3].tolist()}"


def random_params(rng, n=3, m=4, l=3, w1_scale=1.0):
    return ModelParams(
        rng.uniform(-w1_scale, w1_scale, (n, m)),
        rng.normal(size=(m, l)),
        rng.normal(size=l),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def record_criterion():
    def record(number: int, name: str, passed: bool | None, detail: str = ""):
        status = {True: "PASS", False: "FAIL", None: "SKIP"}[passed]
        ACCEPTANCE_LINES.append(f"[{status}] criterion {number:>2}: {name}" + (f" -- {detail}" if detail else ""))

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
