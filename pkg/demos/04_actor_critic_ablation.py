"""
Actor-critic with and without the two entropies
================================================

AC uses a scalar critic.  +VE adds beta * H(pi) to the actor objective;
+RE swaps in an implicit-quantile critic.  On the 10-state slip chain the
exit next to the start pays 0.01 and the far end pays 1, so an actor that
commits early settles for the small reward.

Takes about a minute and a half on one core.
"""

from pathlib import Path

import numpy as np

from derlab import harness as H

here = Path(__file__).resolve().parent
config = H.load_config(here / "configs" / "slip_chain_ac.ini")
runs = H.ablate_ac(config)

print(f"{'variant':<10} {'eval return':>12} {'train return':>13}")
for variant, results in runs.items():
    ev = np.mean([r.auc for r in results])
    tr = np.mean([np.mean([e[2] for e in r.episodes]) for r in results])
    print(f"{variant:<10} {ev:>12.3f} {tr:>13.3f}")

# training returns favour AC: the entropy bonus keeps the behaviour policy
# stochastic.  The greedy evaluation return is what the comparison uses.
out = Path("results") / "slip_chain_ac"
flat = [r for rs in runs.values() for r in rs]
H.write_runs(flat, out)
H.export_results(flat, out, "svg", title="AC family, slip chain")
print("curves and plot written to", out)
