"""Tour of the reverse-mode tape: record a computation, pull gradients back,
and cross-check them against central finite differences.
"""

import numpy as np

from mmvlab import autodiff as ad

# gradients of 0.5 * sum(x * x) are just x
tape = ad.Tape()
x = tape.watch(np.array([[1.0, -2.0], [0.5, 3.0]]))
root = ad.scale(ad.sum(ad.mul(x, x)), 0.5)
grads = ad.backward(tape, root)
print("d/dx 0.5*sum(x^2):")
print(grads[x.node_id])

# a small MLP wired from the same ops
rng = np.random.default_rng(0)
params = {
    "w1": rng.uniform(-0.5, 0.5, (2, 16)),
    "b1": np.zeros(16),
    "w2": rng.uniform(-0.25, 0.25, (16, 1)),
}


def loss(p):
    h = ad.tanh(ad.broadcast_add_row(ad.matmul(inputs, p["w1"]), p["b1"]))
    out = ad.matmul(h, p["w2"])
    return ad.sum(ad.mul(out, out))


inputs = rng.standard_normal((8, 2))
worst = ad.check_gradients(loss, params)
print(f"\nMLP gradient check, worst error ratio vs tolerance: {worst:.2e} "
      f"(<= 1 passes)")

# leaves the root never touches get exact zero gradients
tape = ad.Tape()
used = tape.watch(np.ones(3))
unused = tape.watch(np.ones(2))
grads = ad.backward(tape, ad.sum(used))
print(f"\nunused leaf gradient: {grads[unused.node_id]}")
