"""Exercise the SSL loss reference implementations.

Prints the closed-form anchor cases and a finite-difference audit of both
analytic gradients, mirroring the `losses-check` subcommand.
"""

import math

import numpy as np

from coarsecrop import byol_loss, infonce_loss

rng = np.random.default_rng(0)


def unit(v):
    return v / np.linalg.norm(v)


# Closed forms first. With the positive and a single negative at the same
# similarity, the contrastive loss is exactly ln 2; with K equal negatives
# it is ln(K + 1).
q = np.array([1.0, 1.0, 0.0])
k = np.array([0.5, 0.5, 0.3])
loss, _ = infonce_loss(q, k, [k.copy()], tau=1.0)
print(f"uniform logits, 1 negative : {loss:.12f}  (ln 2 = {math.log(2):.12f})")
loss, _ = infonce_loss(q, k, [k.copy() for _ in range(7)], tau=0.2)
print(f"uniform logits, 7 negatives: {loss:.12f}  (ln 8 = {math.log(8):.12f})")

# The alignment loss is 2 * (1 - cosine): 0 aligned, 2 orthogonal, 4 opposite.
v = rng.standard_normal(16)
for name, target in [("aligned", 3.0 * v), ("opposite", -v)]:
    loss, _, _ = byol_loss(v, target)
    print(f"byol {name:8s}: {loss:.12f}")
loss, _, _ = byol_loss(np.array([1.0, 0.0]), np.array([0.0, 2.0]))
print(f"byol orthogonal: {loss:.12f}")

# Gradient audit against central finite differences (step 1e-5).
def fd(fn, x, step=1e-5):
    g = np.empty_like(x)
    for i in range(x.size):
        hi, lo = x.copy(), x.copy()
        hi[i] += step
        lo[i] -= step
        g[i] = (fn(hi) - fn(lo)) / (2 * step)
    return g


worst = 0.0
for _ in range(50):
    q = unit(rng.standard_normal(8))
    k_pos = unit(rng.standard_normal(8))
    k_negs = [unit(rng.standard_normal(8)) for _ in range(4)]
    _, grad = infonce_loss(q, k_pos, k_negs, 0.2)
    approx = fd(lambda u: infonce_loss(u, k_pos, k_negs, 0.2)[0], q)
    worst = max(worst, np.linalg.norm(grad - approx) / np.linalg.norm(approx))
print(f"\ninfonce gradient vs finite differences, 50 trials: "
      f"max relative error {worst:.2e}")

worst = 0.0
for _ in range(50):
    a = rng.standard_normal(16)
    b = rng.standard_normal(16)
    _, ga, gb = byol_loss(a, b)
    fa = fd(lambda u: byol_loss(u, b)[0], a)
    fb = fd(lambda u: byol_loss(a, u)[0], b)
    worst = max(worst,
                np.linalg.norm(ga - fa) / np.linalg.norm(fa),
                np.linalg.norm(gb - fb) / np.linalg.norm(fb))
print(f"byol gradients vs finite differences, 50 trials:   "
      f"max relative error {worst:.2e}")
