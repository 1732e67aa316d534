"""How much do anchors matter? Sweep their number at 9 samples per class.

Each cell trains a fresh model with the same seed; the table reports the
gap of every cell to the best one in percentage points.
"""
import sys
import tempfile

from grouploss.training import RunConfig, sweep

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 60
with tempfile.TemporaryDirectory() as out:
    table = sweep(RunConfig(epochs=epochs, samples_per_class=9, out_dir=out), "anchors", [0, 1, 2, 3, 4])

print("anchors  R@1     NMI     delta (pp)")
for row in table:
    print(f"{row['anchors']:>7}  {row['recall@1']:.3f}   {row['nmi']:.3f}   {row['delta_pp']:+.1f}")
