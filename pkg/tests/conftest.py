import numpy as np
import pytest

from lbtest import datasets, nn

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture(scope="session")
def blobs():
    """2-class, 2-D blobs split into (train, val) of 500 rows each."""
    full = datasets.synth_blobs(500, 2, 2, 0.1, seed=11)
    return datasets.split(full, datasets.SplitSpec((0.5, 0.5), seed=12))


@pytest.fixture(scope="session")
def blob_mut(blobs):
    train, _ = blobs
    return nn.sgd_train(nn.init_mlp([2, 16, 2], 3), train, nn.TrainConfig(0.5, 50, 32, seed=4))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {k}: {detail}")
