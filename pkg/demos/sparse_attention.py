"""Sparse attention in a few lines.

1.5-entmax turns scores into weights like softmax does, but gives exact zeros
to scores that fall far enough behind the leaders. Run:

    python3 demos/sparse_attention.py
"""

import numpy as np

from socialcvae import entmax as em

scores = np.array([2.0, 1.2, 0.1, -1.5])
soft = np.exp(scores - scores.max())
soft /= soft.sum()
print("scores  ", scores)
print("softmax ", np.round(soft, 4))
print("entmax  ", np.round(em.entmax15_np(scores), 4))

# Scaling the scores up sharpens entmax until only one edge survives.
for gain in (0.5, 1.0, 2.0, 4.0):
    p = em.entmax15_np(gain * scores)
    print(f"gain {gain:3.1f}: support {np.count_nonzero(p)} of {p.size}, weights {np.round(p, 3)}")

# Ragged neighbourhoods are padded with min - 2; padded slots come out exactly zero.
rows = [np.array([1.0, 0.0]), np.array([0.3, 0.2, -0.4])]
batch = em.pad_batch(rows)
print("padded scores\n", batch.values)
print("padded weights\n", np.round(em.entmax15_np(batch.values), 4))

# The threshold is exact, so it agrees with a bisection search to round-off.
rng = np.random.default_rng(0)
s = rng.normal(0, 2, 6)
print("max |exact - bisection| =", np.abs(em.entmax15_np(s) - em.bisection_entmax15(s)).max())
