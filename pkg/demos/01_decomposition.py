"""
Splitting a return distribution around its mean
===============================================

A categorical return distribution p can be written as a point mass at the
atom nearest its mean plus a remainder mu:

    p = (1 - eps) * delta_m + eps * mu

Fitting a prediction q by cross-entropy to p then separates into a term
that only cares about the expectation bin and a cross-entropy to mu.
"""

import math

import numpy as np

from derlab import distributions as D
from derlab.agents import losses as L
from derlab.distributions import CategoricalDist

grid = np.array([0.0, 1.0, 2.0])
p = CategoricalDist(grid, [0.1, 0.6, 0.3])
print("E[p] =", D.expectation(p), " nearest atom index =", D.expectation_bin(p))

# decompose with eps = 0.5; the remainder is recovered exactly
dec = D.decompose_exact(p, 0.5)
print("mu =", dec.mu.probs, " clipped:", dec.clipped)
print("reconstruction matches p:", np.allclose(dec.reconstruct().probs, p.probs))

# the two-term loss against a uniform prediction is 2 ln 3
q = CategoricalDist(grid, [1 / 3] * 3)
print("decomposed loss =", L.decomposed_ce_loss(p, q, 0.5), " 2 ln 3 =", 2 * math.log(3))
print("H(p, q) / (1 - eps) =", D.cross_entropy(p, q) / 0.5)

# if eps is too small the remainder would need negative mass
print("eps = 0.2 clipped:", D.decompose_exact(p, 0.2).clipped)

# mixing the target toward its expectation bin interpolates between
# expectation-only learning (eps = 0) and the full distribution (eps = 1)
for eps in (0.0, 0.5, 1.0):
    print(f"mix eps={eps}:", D.mix_with_dirac(p, eps).probs)
