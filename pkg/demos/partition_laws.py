"""Tour of the univariate partition laws.

Prints the probability of a few partitions under each family, the sequential
seating rule, a normalization check, and a Monte Carlo check from random
weights.

    python demos/partition_laws.py
"""
import math

import numpy as np

from msspy.eppf import DM, DP, GN, PYP, eppf_mc_from_weights, gem_weights, log_eppf, predictive, total_mass_check

families = {"DP(1)": DP(1.0), "PYP(0.5, 1)": PYP(0.5, 1.0), "DM(3, 1)": DM(3, 1.0), "GN(0.5)": GN(0.5)}

print("probability of a partition with the given block sizes")
print(f"{'family':<14}" + "".join(f"{str(s):>14}" for s in [(2,), (1, 1), (2, 1), (1, 1, 1, 1)]))
for name, fam in families.items():
    vals = [math.exp(log_eppf(fam, s)) for s in [(2,), (1, 1), (2, 1), (1, 1, 1, 1)]]
    print(f"{name:<14}" + "".join(f"{v:14.5f}" for v in vals))

# after seeing blocks of sizes 3 and 1, where does the fifth item go?
print("\nseating weights after blocks (3, 1): join 1, join 2, new")
for name, fam in families.items():
    w = predictive(fam, [3, 1])
    print(f"{name:<14}" + "".join(f"{p:10.4f}" for p in w.probabilities))

print("\nsum over all partitions of [7]:",
      ", ".join(f"{name} {total_mass_check(fam, 7):.12f}" for name, fam in families.items()))

rng = np.random.default_rng(1)
est = eppf_mc_from_weights(gem_weights(0.5, 1.0, 1000), [2, 1], 50_000, rng)
print(f"\nPYP(0.5, 1) at (2, 1): exact {math.exp(log_eppf(PYP(0.5, 1.0), [2, 1])):.5f}, "
      f"from stick-breaking weights {est.value:.5f} +- {est.stderr:.5f}")
