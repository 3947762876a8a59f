"""
Regularized policy iteration on a risky bandit
==============================================

Two arms pay the same on average: SAFE always pays 1, RISKY pays 0 or 2.
Plain policy iteration is indifferent.  Adding gamma * f(H) to the reward,
where H is the cross-entropy between the return distribution and its
remainder around the mean, favours the arm whose return is spread out.
"""

import math

import numpy as np

from derlab import operators as O
from derlab.mdp import RISKY, SAFE, make_risky_bandit

bandit = make_risky_bandit(mean=1.0, spread=1.0, gamma=0.9)

# 21 atoms over [0, 20]: the grid contains 0, 1 and 2 exactly
for lam in (0.0, 0.1, 0.5, 1.0):
    res = O.derpi(bandit, lam, n_atoms=21)
    q = res.q[0]
    print(f"lam={lam:<4} Q_SAFE={q[SAFE]:.4f} Q_RISKY={q[RISKY]:.4f} "
          f"closed form 1 + sqrt(lam ln 2) = {1 + math.sqrt(lam * math.log(2)):.4f} "
          f"greedy arm={'RISKY' if np.argmax(q) == RISKY else 'SAFE (tie)'}")

# the entropy table behind the correction
res = O.derpi(bandit, 0.5, n_atoms=21)
print("H(mu, Z) at the start state:", res.entropies[-1][0])
print("clipped decompositions:", res.clipped)

# a soft (vanilla entropy) policy iteration for comparison keeps both arms
pi, _ = O.soft_policy_iteration(bandit, beta=0.2)
print("soft policy iteration, beta = 0.2:", pi[0])
