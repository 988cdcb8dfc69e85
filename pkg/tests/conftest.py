import numpy as np
import pytest

from socialtv.allocator import SessionConfig, UserState
from socialtv.qoe import REFERENCE_MODELS

VIDEOS = ("duck", "crew", "ice")


def random_instance(rng, n, offsets=False, video=None, G=3.0):
    """h ~ Exp(1), requests uniform over a decade, budget scarce-to-abundant."""
    h = rng.exponential(1.0, n)
    h = np.maximum(h, 1e-6)
    S = 1e7 * 10 ** rng.uniform(0, 1, n)
    if offsets:
        base = rng.uniform(0, 20)
        off = np.maximum(base + rng.uniform(0, G, n), 0.0)
    else:
        off = np.zeros(n)
    budget = float(S.mean() * 10 ** rng.uniform(-1.5, 0.7))
    model = REFERENCE_MODELS[video or VIDEOS[int(rng.integers(3))]]
    cfg = SessionConfig(budget, model, delay_bound=G)
    users = [UserState(float(a), float(b), float(o)) for a, b, o in zip(h, S, off)]
    return cfg, users


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
