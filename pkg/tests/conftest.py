import numpy as np
import pytest

from farkasnet.tensor import Tensor

FD_STEP = 1e-5
REL_TOL = 1e-4


def numeric_grad(f, arrays, h=FD_STEP):
    """Central differences of scalar ``f()`` w.r.t. each array (perturbed in place)."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + h
            up = f()
            a[i] = old - h
            down = f()
            a[i] = old
            g[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def rel_error(analytic, numeric):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-3)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def check_grads(build_loss, params):
    """Compare autodiff against central differences; ``build_loss`` maps tensors to a scalar Tensor.

    Returns the worst relative error over all parameter entries.
    """
    tensors = [Tensor(p, requires_grad=True) for p in params]
    build_loss(*tensors).backward()
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]
    raw = [t.data for t in tensors]

    def f():
        return build_loss(*[Tensor(r) for r in raw]).item()

    numeric = numeric_grad(f, raw)
    return max(rel_error(a, n) for a, n in zip(analytic, numeric))


@pytest.fixture
def gradcheck():
    return check_grads
