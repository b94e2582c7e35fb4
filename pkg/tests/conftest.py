import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_connected_labels(rng: np.random.Generator, h: int, w: int, target: int) -> np.ndarray:
    """Grow ``target`` seeds by random frontier expansion; every label ends up 4-connected."""
    n = h * w
    target = max(1, min(target, n))
    lab = -np.ones(n, dtype=np.int64)
    seeds = rng.choice(n, size=target, replace=False)
    lab[seeds] = np.arange(target)
    while (lab < 0).any():
        free = np.flatnonzero(lab < 0)
        rng.shuffle(free)
        for p in free:
            r, c = divmod(int(p), w)
            nb = [q for q in ((r - 1) * w + c if r else -1, (r + 1) * w + c if r + 1 < h else -1,
                              p - 1 if c else -1, p + 1 if c + 1 < w else -1) if q >= 0 and lab[q] >= 0]
            if nb:
                lab[p] = lab[nb[rng.integers(len(nb))]]
    return lab.reshape(h, w)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
