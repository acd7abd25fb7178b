import warnings

import numpy as np
import pytest

from hiercdm.core import hierarchy_template
from hiercdm.simulate import SimSpec, simulate


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def linear_dina():
    """Small noisy DINA data set on the linear hierarchy."""
    spec = SimSpec.from_noise("dina", hierarchy_template("linear"), 0.1, n_subjects=400, seed=3)
    return simulate(spec)


@pytest.fixture(autouse=True)
def _quiet_recovery_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        yield


_ACCEPTANCE: dict[int, tuple[str, bool | None, str]] = {}


def record(criterion: int, label: str, ok: bool | None, detail: str) -> None:
    """Store one acceptance outcome; ``ok=None`` marks a skipped criterion."""
    _ACCEPTANCE[criterion] = (label, ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(_ACCEPTANCE):
        label, ok, detail = _ACCEPTANCE[criterion]
        status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
        terminalreporter.write_line(f"{status} criterion {criterion}: {label}: {detail}")
