import numpy as np
import pytest

from agcnn.core import Tensor, grad


def numerical_grad(f, arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. every entry of ``arr`` (mutated in place)."""
    out = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = out.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return out


def rel_err(a, b, floor=1e-8) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def check_grads(build, tensors, h=1e-5, tol=1e-4):
    """Compare analytic and numerical gradients of the scalar ``build()``."""
    out = build()
    analytic = grad(out, tensors)
    worst = 0.0
    for t, g in zip(tensors, analytic):
        num = numerical_grad(lambda: build().item(), t.data, h)
        worst = max(worst, rel_err(g, num, floor=1e-6))
    assert worst <= tol, f"relative gradient error {worst:.3e} > {tol}"
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def param(rng, *shape, scale=1.0):
    return Tensor(rng.normal(0, scale, size=shape), requires_grad=True)
