import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from segdistill.models import (  # noqa: E402
    IdHeadConfig,
    build_joint,
    default_decoder,
    toy_encoder_config,
)
from segdistill.synthfaces import generate_dataset, split  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_joint_factory():
    def make(seed=0, classes=5, res=32):
        enc = toy_encoder_config()
        return build_joint(enc, default_decoder(enc, res, 7), IdHeadConfig(classes, 16), res, seed)
    return make


@pytest.fixture(scope="session")
def small_dataset():
    ds = generate_dataset(5, 12, 32, seed=3)
    split(ds, 3)
    return ds


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(results):
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
