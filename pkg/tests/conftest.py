import numpy as np
import pytest

from jointdiff.numerics import Rng
from jointdiff.toydata import SceneSpec, generate_arrays


def finite_difference_check(net, x, t, probes=4, h=1e-3, seed=0):
    """Compare analytic and central-difference gradients of ``sum(out * R)``.

    Checks ``probes`` random entries per parameter plus the entry with the
    largest analytic gradient. Returns the worst (relative error, name).
    """
    rng = np.random.default_rng(seed)
    out, cache = net.forward(x, t, keep_cache=True)
    weights = rng.standard_normal(out.shape)
    grads, _ = net.backward(cache, weights)

    def loss():
        return float(np.sum(net.forward(x, t) * weights))

    worst = (0.0, None)
    for name, p in net.params.items():
        flat = p.reshape(-1)
        g = grads[name].reshape(-1)
        idx = set(rng.integers(0, flat.size, probes).tolist())
        idx.add(int(np.argmax(np.abs(g))))
        for i in idx:
            old = flat[i]
            flat[i] = old + h
            up = loss()
            flat[i] = old - h
            down = loss()
            flat[i] = old
            num = (up - down) / (2 * h)
            err = abs(num - g[i]) / max(abs(num), abs(g[i]), 1e-6)
            if abs(num - g[i]) < 1e-6:
                err = 0.0
            if err > worst[0]:
                worst = (err, name)
    return worst


@pytest.fixture(scope="session")
def toy16():
    """Small 3-class 16 x 16 toy set: (train_x, train_y, test_x, test_y)."""
    spec = SceneSpec(size=16, num_classes=3, seed=7)
    tx, ty = generate_arrays(spec, 48)
    vx, vy = generate_arrays(spec, 24, stream_offset=1000)
    return tx, ty, vx, vy


@pytest.fixture
def rng():
    return Rng(1234)
