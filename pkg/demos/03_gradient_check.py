"""Check the hand-written backward pass against central finite differences.

The loss goes embeddings -> Pearson similarities -> softmax prior ->
replicator steps -> cross-entropy. Coordinates sitting on a rectifier kink
(a correlation at exactly zero, say) have no derivative and are reported as
excluded rather than compared.
"""
import warnings

import numpy as np

from grouploss.autograd import GroupLossInstance, check_group_loss
from grouploss.similarity import DegenerateRowWarning
from grouploss.training import gradcheck_suite

rng = np.random.default_rng(0)
inst = GroupLossInstance.random(rng, n=8, m=3, d=5, iteration_count=3, num_anchors=1)
report = check_group_loss(inst)
print("one instance:", report.summary())

# far too tight on purpose: failures are listed with their coordinates
strict = check_group_loss(inst, tol=1e-12)
for var, coord, analytic, numeric, err in strict.failures[:3]:
    print(f"  {var}{list(coord)}  analytic={analytic:+.8e}  numeric={numeric:+.8e}  rel={err:.1e}")

with warnings.catch_warnings():
    warnings.simplefilter("ignore", DegenerateRowWarning)
    results = gradcheck_suite(count=20, seed=1, encoder_instances=3, negative_mode="shift")
worst = max(rep.max_rel_error for _, rep in results)
print(f"\nshift mode suite: {sum(r.passed for _, r in results)}/{len(results)} passed, max rel err {worst:.1e}")
