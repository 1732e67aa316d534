"""Three samples, two anchors: watch the undecided sample pick a side.

A is fixed to class 0 and B to class 1. C starts uniform, and is more
similar to A (0.8) than to B (0.3), so the replicator dynamics move it to
class 0. The consistency functional grows along the way.
"""
import numpy as np

from grouploss.dynamics import AnchorSpec, consistency, init_assignments, refine

W = np.array([
    [0.0, 0.1, 0.8],
    [0.1, 0.0, 0.3],
    [0.8, 0.3, 0.0],
])
labels = np.array([0, 1, 0])
anchors = AnchorSpec((0, 1), labels)  # A and B

# zero logits give C a uniform prior; anchors are overwritten with one-hots
X0 = init_assignments(np.zeros((3, 2)), anchors, temperature=1.0)
trace = refine(X0, W, anchors, iteration_count=6)

print("step   x_C            F(X)")
for t, X in enumerate(trace.X_history):
    print(f"{t:>4}   [{X[2, 0]:.3f} {X[2, 1]:.3f}]   {consistency(X, W):.4f}")

print("\nsupport of C at step 0:", trace.Pi_history[0][2])
print("final labels:", trace.final.argmax(axis=1))
