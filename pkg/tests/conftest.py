import numpy as np
import pytest

from lru_online.bptt import WindowBatch, bptt_gradient
from lru_online.lru import LruNetwork, init_network


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_batch(rng, net, T, batch=1):
    inputs = rng.standard_normal((batch, T, net.input_dim))
    targets = rng.standard_normal((batch, T, net.output_dim))
    return WindowBatch(inputs=inputs, targets=targets, window=T,
                       session_ids=np.zeros(batch, dtype=np.int64))


def finite_difference_grads(net, batch, eps=1e-5, delta=1.0):
    """Central differences of the batch loss w.r.t. every parameter entry."""
    params = net.parameters()
    out = []
    for layer in params:
        g_layer = {}
        for name, arr in layer.items():
            g = np.zeros_like(arr)
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                i = it.multi_index
                arr[i] += eps
                lp, _ = bptt_gradient(LruNetwork.from_parameters(params),
                                      batch, delta)
                arr[i] -= 2 * eps
                lm, _ = bptt_gradient(LruNetwork.from_parameters(params),
                                      batch, delta)
                arr[i] += eps
                g[i] = (lp - lm) / (2 * eps)
            g_layer[name] = g
        out.append(g_layer)
    return out


def max_rel_error(analytic, numeric, floor=1e-8):
    worst = 0.0
    for la, ln in zip(analytic, numeric):
        for name in la:
            denom = np.maximum(np.abs(ln[name]), floor)
            worst = max(worst, float(np.max(np.abs(la[name] - ln[name]) / denom)))
    return worst


def small_random_net(rng, m=None, n=None, p=None, depth=1):
    m = m or int(rng.integers(2, 9))
    n = n or int(rng.integers(3, 17))
    p = p or int(rng.integers(1, 6))
    widths = tuple([n] * depth)
    return init_network(m, widths, p, r_min=0.4, r_max=0.95,
                        seed=int(rng.integers(0, 2**31)))
