"""Train an MLP with the Group Loss on synthetic blobs and evaluate on unseen classes.

The blobs have 20 classes; the first 10 train the encoder and the other 10
are only used for retrieval (Recall@K) and clustering (NMI). The same run
with iteration_count=0 is plain softmax cross-entropy, which makes a
convenient baseline.
"""
import sys

from grouploss.training import RunConfig, fit

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 60
config = RunConfig(epochs=epochs, seed=0)

results = {}
for name, cfg in [("group loss", config), ("softmax only", config.replace(iteration_count=0))]:
    result = results[name] = fit(cfg)
    rep = result.report
    recalls = "  ".join(f"R@{k}={v:.3f}" for k, v in sorted(rep.recall_at.items()))
    print(f"{name:>13}: {recalls}  NMI={rep.nmi:.3f}  (final loss {result.history[-1]['loss']:.4f})")

# an untrained encoder is already decent on these blobs, so look at both numbers
untrained = fit(config.replace(epochs=0)).report
print(f"{'untrained':>13}: R@1={untrained.recall_at[1]:.3f}  NMI={untrained.nmi:.3f}")

# learning curve of the group loss run, every 10 epochs
print("\nepoch  lr       loss     test R@1")
for row in results["group loss"].history[::10]:
    print(f"{row['epoch']:>5}  {row['lr']:.0e}  {row['loss']:.4f}   {row['test_recall@1']:.3f}")
