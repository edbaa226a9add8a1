from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from deep_mtmv import autodiff as ad

GOLDEN = Path(__file__).parent / "golden"

FD_STEP = 1e-5  # near the cube root of float64 epsilon, balancing truncation and roundoff
FD_TOL = 1e-5


def finite_difference_error(build_loss, params, step=FD_STEP) -> float:
    """Max relative error between backprop and central differences.

    ``build_loss()`` must rebuild the scalar loss from the current parameter
    values. Relative error per entry is |a - n| / max(|a|, |n|, 1e-6).
    """
    loss = build_loss()
    ad.backward(loss)
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, grad in zip(params, analytic):
        flat = p.data.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            up = float(build_loss().data)
            flat[k] = orig - step
            down = float(build_loss().data)
            flat[k] = orig
            numeric = (up - down) / (2 * step)
            a = grad.reshape(-1)[k]
            worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), 1e-6))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset():
    from deep_mtmv.datagen import PlantedSpec, gen_synthetic
    return gen_synthetic(PlantedSpec([[0, 1], [2, 3]], [1.0, 1.0], seed=3), 60, [(6,), (5,)])
