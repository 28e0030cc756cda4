import numpy as np
import pytest

from castwb.chroma import normalize
from castwb.scene import save_scene
from castwb.synthetic import make_dataset
from castwb.vlmwire import MockServer


def random_illuminants(rng, n):
    """Canonical illuminants spread over the positive octant, away from the axes."""
    return [normalize(rng.uniform(0.05, 1.0, 3)) for _ in range(n)]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_dataset():
    return make_dataset(10, seed=7)


@pytest.fixture(scope="session")
def dataset_dir(tmp_path_factory, small_dataset):
    root = tmp_path_factory.mktemp("dataset")
    for scene in small_dataset:
        save_scene(root / scene.scene_id, scene.image, scene.meta)
    return root


@pytest.fixture
def mock(dataset_dir):
    with MockServer(dataset_dir) as server:
        yield server


# One PASS/FAIL line per acceptance criterion in the terminal summary.
_CRITERIA = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        note = getattr(item, "criterion_note", "")
        _CRITERIA.append((marker.args[0], report.outcome.upper(), note))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, note in _CRITERIA:
        verdict = "PASS" if outcome == "PASSED" else "FAIL"
        terminalreporter.write_line(f"{verdict}  {name}" + (f"  [{note}]" if note else ""))
