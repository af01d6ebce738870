"""How strongly do two groups share species?

Compares the tie-based correlation of several constructions, checks one row
by simulation, and prints discovery curves: the chance that the first draw
of group 1 has not yet appeared among the first n draws of group 2.

    python demos/dependence.py
"""
import numpy as np

from msspy import DP, PYP, Additive, Hierarchical, Nested
from msspy.diagnostics import closed_form_registry, discovery_curve, named_simulator, tie_probabilities_mc

rows = [
    ("hdp", dict(alpha=1.0, alpha0=1.0)),
    ("hdp", dict(alpha=1.0, alpha0=100.0)),
    ("hpy", dict(sigma=0.5, alpha=1.0, sigma0=0.5, alpha0=1.0)),
    ("ndp", dict(alpha=1.0, beta=1.0)),
    ("ndp", dict(alpha=0.01, beta=1.0)),
    ("+dp", dict(eps=0.5, alpha0=1.0, alpha=1.0)),
    ("+dp", dict(eps=(0.0, 1.0), alpha0=1.0, alpha=1.0)),
    ("hhdp", dict(alpha=1.0, beta=1.0, beta0=1.0)),
    ("ncam", dict(alpha=1.0, beta=1.0)),
]
print(f"{'model':<6} {'parameters':<62} {'within':>8} {'across':>8} {'corr':>8}")
for model, p in rows:
    t = closed_form_registry(model, **p)
    print(f"{model:<6} {str(p):<62} {t.within_j:8.4f} {t.across:8.4f} {t.correlation:8.4f}")

rng = np.random.default_rng(0)
mc = tie_probabilities_mc(named_simulator("ncam", alpha=1.0, beta=1.0), 0, 1, 20_000, rng, J=2)
print(f"\nncam(1, 1) by simulation: corr {mc.correlation:.4f} +- {mc.stderr['correlation']:.4f}")

specs = {
    "hierarchical DP": Hierarchical((DP(1.0), DP(1.0)), DP(1.0)),
    "nested DP": Nested(DP(1.0), DP(1.0)),
    "additive PY": Additive((0.5, 0.5), PYP(0.3, 1.0), (PYP(0.3, 1.0), PYP(0.3, 1.0))),
}
n_max = 20
print(f"\n{'n':>3}" + "".join(f"{k:>18}" for k in specs))
curves = {k: discovery_curve(s, 0, 1, n_max, 5000, rng, J=2) for k, s in specs.items()}
for i in (0, 1, 4, 9, 19):
    print(f"{i + 1:3d}" + "".join(f"{curves[k][i, 1]:18.3f}" for k in specs))
