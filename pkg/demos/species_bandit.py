"""Sequential species discovery on synthetic Zipf arms.

Four arms share a pool of 300 species; two arms have heavy tails
(exponent 1.3) and two light ones (exponent 2). Each strategy picks the arm
to sample next; model-based strategies estimate every arm's probability of
yielding a species never seen before.

    python demos/species_bandit.py [steps] [replicates]
"""
import sys
import time

import numpy as np

from msspy.bandit import BanditConfig, generate_zipf_arms, metrics, run_replicates

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 60
replicates = int(sys.argv[2]) if len(sys.argv) > 2 else 4

arms = generate_zipf_arms(300, 250, (1.3, 1.3, 2.0, 2.0), rng=np.random.default_rng(0))
cfg = BanditConfig(init_per_arm=30, steps=steps, replicates=replicates, mode="iid", seed=1)

print(f"{'strategy':<10} {'new/step':>9} {'rmse':>8} {'seconds':>8}   pulls per arm (replicate 1)")
for strategy in ("uniform", "oracle", "IndepDP", "HierPY", "AddPY"):
    t = time.perf_counter()
    trajs = run_replicates(cfg, arms, strategy)
    m = metrics(trajs)
    rmse = "NA" if m.rmse is None else f"{m.rmse:.4f}"
    pulls = np.bincount(trajs[0].arms, minlength=4)
    print(f"{strategy:<10} {m.avg_new_per_step:9.4f} {rmse:>8} {time.perf_counter() - t:8.1f}   {pulls.tolist()}")
