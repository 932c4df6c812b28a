import numpy as np
import pytest

from posetransfer.model import ModelConfig, init_params
from posetransfer.synthdata import DatasetConfig, make_dataset

TOY_MODEL = ModelConfig(encoder_channels=(8, 8, 8), decoder_widths=(8, 8, 8, 8))
TRAIN_MODEL = ModelConfig(encoder_channels=(16, 32, 64), decoder_widths=(64, 32, 32, 16))


def numeric_grad(fn, arrays, h=1e-6):
    """Central finite-difference gradients of a scalar function of arrays."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = fn(arrays)
            flat[i] = orig - h
            lo = fn(arrays)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * h)
        grads.append(g)
    return grads


def rel_err(a, b):
    denom = max(np.abs(a).max(), np.abs(b).max(), 1e-6)
    return np.abs(a - b).max() / denom


@pytest.fixture(scope="session")
def toy_params():
    return init_params(TOY_MODEL, np.random.default_rng(7))


@pytest.fixture(scope="session")
def tiny_dataset():
    cfg = DatasetConfig(train_identities=3, train_poses=4,
                        test_identities=2, unseen_poses=2)
    return make_dataset(cfg, np.random.default_rng(11))
