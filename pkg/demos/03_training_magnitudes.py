"""Train a small embedding network and see what the feature magnitude learns.

Run with ``python3 demos/03_training_magnitudes.py`` (about two seconds).
"""

# %% Data with a known per-sample quality
import numpy as np

from magface_lab.toy import SyntheticSpec, TrainConfig, generate_dataset, train

spec = SyntheticSpec(n_classes=8, samples_per_class=200, seed=0)
data = generate_dataset(spec)
print(f"{len(data.labels)} samples, inputs {data.inputs.shape[1]}-d")

# %% Same data, same seed, two losses
runs = {
    "magface": train(data, TrainConfig(loss_variant="magface", seed=0)),
    "softmax": train(data, TrainConfig(loss_variant="softmax", params=None, seed=0)),
}
for name, rep in runs.items():
    print(f"{name:8s} loss {rep.loss_history[0]:7.3f} -> {rep.loss_history[-1]:6.3f}  "
          f"acc {rep.train_accuracy:.3f}  pearson(|f|, cos) {rep.pearson_mag_cos:+.3f}  "
          f"spearman(|f|, quality) {rep.spearman_mag_quality:+.3f}")

# %% Under the magnitude-aware loss, magnitude rises with the true quality
stats = runs["magface"].stats
edges = np.quantile(stats.true_quality, [0, 0.25, 0.5, 0.75, 1.0])
bins = np.clip(np.searchsorted(edges, stats.true_quality, side="right") - 1, 0, 3)
for b in range(4):
    sel = bins == b
    print(f"quality quartile {b + 1}: mean magnitude {stats.magnitude[sel].mean():6.2f}, "
          f"mean cos {stats.cos_theta[sel].mean():.3f}")
