from __future__ import annotations

import numpy as np
import pytest

from ivdg import dgp
from ivdg.rng import stream


def linear_setup(seed: int, d_f: int = 1, d_x: int = 1, **param_overrides):
    shared = dgp.sample_shared(d_f, d_x, dgp.FIvtKind.LINEAR, stream(seed, "shared"))
    params = dgp.sample_domain_params(shared, 1.0, stream(seed, "params"), domain_id=0)
    if param_overrides:
        fields = {**params.__dict__, **param_overrides}
        params = dgp.DomainParams(**fields)
    return shared, params


def toy_labeled(n: int, rng: np.random.Generator, shift: float = 0.0, domain_id=0, d: int = 2) -> dgp.DomainDataset:
    """Two Gaussian blobs separated along the first axis; class = side of the split."""
    labels = np.repeat([0, 1], n // 2)
    x = rng.normal(size=(labels.size, d))
    x[:, 0] += np.where(labels == 1, 2.5, -2.5)
    x += shift
    return dgp.DomainDataset(x=x, y=labels.astype(float), labels=labels, domain_id=domain_id)


@pytest.fixture
def rng() -> np.random.Generator:
    return stream(1234, "tests")


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.LINE_LOG:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.LINE_LOG:
            terminalreporter.write_line(line)
