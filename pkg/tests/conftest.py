import numpy as np
import pytest

from dve.graph import SignedDigraph


def random_signed_graph(n, n_edges, rng, p_pos=0.6):
    """Uniform random signed digraph with distinct ordered pairs and no self-loops."""
    pairs = [(u, v) for u in range(n) for v in range(n) if u != v]
    pick = rng.choice(len(pairs), size=min(n_edges, len(pairs)), replace=False)
    u = np.array([pairs[p][0] for p in pick], dtype=np.int64)
    v = np.array([pairs[p][1] for p in pick], dtype=np.int64)
    s = np.where(rng.random(len(pick)) < p_pos, 1, -1)
    return SignedDigraph.from_arrays(n, u, v, s)


def dense_propagation(a):
    a = np.asarray(a, dtype=float) + np.eye(len(a))
    d = a.sum(axis=1)
    return a / np.sqrt(np.outer(d, d))


def central_difference(f, x, h=1e-5):
    """Finite-difference gradient of scalar f at every coordinate of x (modified in place, restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b, floor=1e-8):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
