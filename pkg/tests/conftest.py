from __future__ import annotations

import numpy as np
import pytest

from epolab.flowmodel import ModelPair, VelocityModel

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def perturbed_pair(dim=1, seed=0, hidden=(8,), periodic=False, scale=0.3) -> ModelPair:
    """Model pair whose adapters are non-zero, so trainable and reference models differ."""
    rng = np.random.default_rng(seed)
    pre = VelocityModel.init(dim, hidden=hidden, n_time_features=4, periodic=periodic, seed=seed)
    mp = ModelPair.from_pretrained(pre, rank=2, seed=seed + 1)
    mp.opt.adapters = {k: (v if k.startswith("A") else scale * rng.standard_normal(v.shape))
                       for k, v in mp.opt.adapters.items()}
    return mp


@pytest.fixture
def pair():
    return perturbed_pair()
