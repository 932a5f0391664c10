"""Cluster embeddings of unseen samples and score the partitions.

Run with ``python3 demos/05_clustering.py``.
"""

# %%
import numpy as np

from magface_lab.evaluation import ahc, clustering_report, dbscan, kmeans
from magface_lab.toy import SyntheticSpec, TrainConfig, generate_dataset, train

spec = SyntheticSpec(n_classes=8, samples_per_class=200, seed=0)
model = train(generate_dataset(spec), TrainConfig(loss_variant="magface", seed=0)).model
test = generate_dataset(spec, split=1)
E = model.embed(test.inputs)
k = len(np.unique(test.labels))

# %% Three algorithms, all on cosine geometry
results = {
    "kmeans": (kmeans(E, k, seed=0), {"k": k}),
    "ahc": (ahc(E, k), {"k": k}),
}
for eps in (0.05, 0.1, 0.3):
    results[f"dbscan eps={eps}"] = (dbscan(E, eps, 5), {"eps": eps, "min_pts": 5})

for name, (res, params) in results.items():
    r = clustering_report(name, params, res.assignment, test.labels)
    print(f"{name:16s} clusters {res.n_clusters:3d}  NMI {r['nmi']:.3f}  BCubed F {r['bcubed_f']:.3f}")
