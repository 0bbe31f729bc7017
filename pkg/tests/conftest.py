import numpy as np
import pytest

from volmixer import autodiff as ad
from volmixer.autodiff import Tape, Tensor

FIXTURES = __file__.rsplit("/", 1)[0] + "/fixtures"


def finite_diff_check(build_loss, tensors, eps=1e-5, tol=1e-4):
    """Compare analytic gradients against central finite differences.

    ``build_loss`` must rebuild the scalar loss from the given tensors each
    time it is called (the tape is single-use). Relative error is measured
    against max(1, |analytic|, |numeric|) elementwise.
    """
    tape = Tape()
    with tape:
        loss = build_loss()
    ad.backward(loss, tape)
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.values)
                for t in tensors]

    worst = 0.0
    for t, grad in zip(tensors, analytic):
        flat = t.values.ravel()
        num = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(build_loss().values)
            flat[i] = orig - eps
            down = float(build_loss().values)
            flat[i] = orig
            num[i] = (up - down) / (2 * eps)
        num = num.reshape(t.values.shape)
        denom = np.maximum(1.0, np.maximum(np.abs(num), np.abs(grad)))
        worst = max(worst, float(np.max(np.abs(grad - num) / denom)))
    assert worst < tol, f"max relative gradient error {worst:.3e} >= {tol}"
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def leaf(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)
