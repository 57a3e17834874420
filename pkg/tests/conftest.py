import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("repo", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

ROOT = Path(__file__).resolve().parent.parent
GOLDEN = Path(__file__).resolve().parent / "golden"
sys.path.insert(0, str(ROOT / "tools"))


@pytest.fixture(scope="session")
def mnist():
    from opticsense.inference import bundled, load_dataset
    return load_dataset(bundled("datasets/mnist_1k"))


@pytest.fixture(scope="session")
def tiny_k3():
    from opticsense.inference import bundled, load_model
    return load_model(bundled("models/tiny_cnn_k3"))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for key in sorted(RESULTS, key=lambda k: (int(k.split()[0].rstrip("ab")), k)):
            ok, detail = RESULTS[key]
            terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
