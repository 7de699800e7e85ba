"""Full pipeline: attack, p-value sequence, change-point segmentation.

Seeded binary segmentation proposes nested intervals over the p-value
sequence; each interval's best split is scored with a two-sample CDF distance
and calibrated by a moving-block bootstrap, and narrowest significant
intervals are kept.  Detected segment starts are compared with the truth via
the Rand index of the induced partitions.
"""

import numpy as np

from wmseg.cpd import BootstrapConfig, rand_index, seedbs_not
from wmseg.decode import AttackSpec, apply_attack, generate_watermarked
from wmseg.keys import generate_keys
from wmseg.lm import MarkovLM
from wmseg.rtest import RandTestConfig, pvalue_sequence
from wmseg.stats import DetectionContext
from wmseg.cpd import ChangePointSet

n, V, B = 500, 50, 20
model = MarkovLM(V, temperature=0.45, seed=1, alpha=0.3)
keys = generate_keys("EMS", n, V, seed=2)
wm = generate_watermarked(model, keys, n)
attacked = apply_attack(wm, AttackSpec(kind="substitution", position=201, length=100),
                        model, keys=keys, seed=5)
truth = ChangePointSet(points=attacked.true_change_points(), m=len(attacked))
print(f"truth: change points at {truth.points.tolist()} in a {len(attacked)}-token text")

ctx = DetectionContext.from_source(model, attacked.tokens)
seq = pvalue_sequence(keys, ctx, B=B, config=RandTestConfig(T=99, statistic="ems-lr", seed=6))

detected, intervals = seedbs_not(seq, zeta=0.01,
                                 bootstrap=BootstrapConfig(block=B, T=999, seed=7))
print(f"detected: {detected.points.tolist()}")
for iv in intervals:
    if iv.selected:
        print(f"  selected interval ({iv.r}, {iv.s}]: split at {iv.tau_hat}, "
              f"stat {iv.S:.3f}, bootstrap p {iv.p_tilde:.4f}")
print(f"Rand index vs truth: {rand_index(truth, detected):.4f}")
