import os

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import numpy as np  # noqa: E402
import pytest  # noqa: E402
from hypothesis import HealthCheck, settings  # noqa: E402

settings.register_profile("ptnet", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ptnet")


@pytest.fixture(scope="session")
def small_scenarios():
    from ptnet.synth import generate_scenarios

    return generate_scenarios(11, 15)


@pytest.fixture(scope="session")
def small_samples(small_scenarios):
    from ptnet.model import ModelConfig, prepare_samples

    return prepare_samples(small_scenarios, ModelConfig())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ---------------------------------------------------------------------------
# acceptance reporting: one line per criterion at the end of the run

_CRITERIA: dict[int, tuple[str, str, float, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when != "call":
        return
    number, title = mark.args
    details = "; ".join(v for k, v in item.user_properties if k == "detail")
    status = "PASS" if report.passed else "FAIL"
    _CRITERIA[number] = (status, title, report.duration, details)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, title, duration, details = _CRITERIA[number]
        terminalreporter.write_line(f"[{status}] criterion {number:>2}: {title} ({duration:.1f} s) {details}")
