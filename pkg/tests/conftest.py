import numpy as np
import pytest

from lowprofool.model import Mlp, MlpConfig


def linear_victim(w, b=0.0):
    """Two-logit linear network whose margin ``logit_1 - logit_0`` is ``w @ x + b``."""
    w = np.asarray(w, dtype=np.float64)
    weights = np.column_stack([-w / 2, w / 2])
    biases = np.array([-b / 2, b / 2])
    return Mlp([weights], [biases], MlpConfig((len(w), 2)))


def random_mlp(rng, sizes=(3, 6, 5, 2), scale=1.0):
    weights = [rng.normal(scale=scale, size=(a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
    biases = [rng.normal(scale=0.3, size=b) for b in sizes[1:]]
    return Mlp(weights, biases, MlpConfig(sizes))


def central_differences(f, x, h=1e-5):
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for j in range(len(x)):
        up, down = x.copy(), x.copy()
        up[j] += h
        down[j] -= h
        g[j] = (f(up) - f(down)) / (2 * h)
    return g


def relative_error(a, b, floor=1e-7):
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance summary -----------------------------------------------------

_criteria: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.skipped):
        return
    for key, value in report.user_properties:
        if key == "criterion":
            number, text = value
            status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
            previous = _criteria.get(number)
            if previous is None or previous[0] == "PASS" or status == "FAIL":
                _criteria[number] = (status, text)


def pytest_collection_modifyitems(items):
    for item in items:
        marker = item.get_closest_marker("criterion")
        if marker is not None:
            item.user_properties.append(("criterion", tuple(marker.args)))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        status, text = _criteria[number]
        terminalreporter.write_line(f"criterion {number}: {status}  {text}")
