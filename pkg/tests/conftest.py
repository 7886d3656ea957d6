import numpy as np
import pytest

from emdens.data_io import BlobSpec, normalize, synth_blobs

# criterion id -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def record(criterion, passed, detail=""):
    ACCEPTANCE[criterion] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda s: int(s.split()[0])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {key}: {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def blobs4():
    img, labels = synth_blobs(BlobSpec(4, 250, 6, mean_separation=8.0, noise_sigma=0.5, seed=3))
    scaled, spec = normalize(img)
    return img, scaled, spec, labels
