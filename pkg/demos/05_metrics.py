"""Recall@K, K-means and NMI on a small hand-made embedding."""
import numpy as np

from grouploss.evaluation import kmeans_fit, l2_normalize, nmi, recall_at_k

rng = np.random.default_rng(3)
centers = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]])
labels = np.repeat([0, 1, 2], 10)
emb = l2_normalize(centers[labels] + 0.4 * rng.normal(size=(30, 2)))

print("recall:", {k: round(v, 3) for k, v in recall_at_k(emb, labels, [1, 2, 4, 8]).items()})

fit = kmeans_fit(emb, 3, seed=0)
print(f"k-means inertia {fit.inertia:.3f}, NMI {nmi(fit.labels, labels):.3f}")

# renaming clusters changes nothing
print(f"NMI after relabeling {nmi(np.array([7, 3, 5])[fit.labels], labels):.3f}")
print("independent partitions:", nmi([0, 0, 1, 1], [0, 1, 0, 1]))
