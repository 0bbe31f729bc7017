"""Walk through the autodiff core on a small composite function.

Builds y = mean(gelu(linear(x, W, b))), backpropagates through the tape, and
compares every gradient against central finite differences.
"""

import numpy as np

from volmixer import autodiff as ad
from volmixer.autodiff import Tape, Tensor, backward

rng = np.random.default_rng(0)
x = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
W = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
b = Tensor(np.zeros(2), requires_grad=True)


def forward():
    return ad.mean(ad.gelu(ad.linear(x, W, b)))


tape = Tape()
with tape:
    loss = forward()
backward(loss, tape)
print(f"loss = {float(loss.values):.6f}")

eps = 1e-6
for name, t in [("x", x), ("W", W), ("b", b)]:
    numeric = np.zeros_like(t.values)
    flat = t.values.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + eps
        hi = float(forward().values)
        flat[i] = keep - eps
        lo = float(forward().values)
        flat[i] = keep
        num_flat[i] = (hi - lo) / (2 * eps)
    err = np.max(np.abs(t.grad - numeric))
    print(f"d loss / d {name}: max |analytic - numeric| = {err:.2e}")
