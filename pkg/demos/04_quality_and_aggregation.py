"""Magnitude as a quality score: reject low-quality pairs, weight templates.

Run with ``python3 demos/04_quality_and_aggregation.py``.
"""

# %% Embed a held-out split with a trained model
import numpy as np

from magface_lab.evaluation import (
    PairProtocol,
    QualityScores,
    aggregate_templates,
    build_templates,
    error_versus_reject,
    pair_scores,
    template_protocol,
    verification_table,
)
from magface_lab.toy import (
    SyntheticSpec,
    TrainConfig,
    generate_dataset,
    synthetic_identity_embeddings,
    train,
)

spec = SyntheticSpec(n_classes=8, samples_per_class=200, seed=0)
model = train(generate_dataset(spec), TrainConfig(loss_variant="magface", seed=0)).model
test = generate_dataset(spec, split=1)
E = model.embed(test.inputs)
protocol = PairProtocol.all_pairs(test.labels)
s = pair_scores(protocol, E)
print("TAR at FAR:", verification_table(s[protocol.is_genuine], s[~protocol.is_genuine], [0.1, 0.01, 0.001]))

# %% Error-versus-reject: magnitude against two controls
fractions = [0.0, 0.1, 0.2, 0.3, 0.4]
rng = np.random.default_rng(3)
controls = {
    "magnitude": QualityScores.from_magnitudes(E),
    "constant": np.ones(len(E)),
    "random": rng.random(len(E)),
}
for name, q in controls.items():
    curve = error_versus_reject(protocol, E, q, fractions, 0.01)
    print(f"{name:9s} FNMR@FMR=0.01:", np.round(curve.fnmr_values, 4).tolist())

# %% Templates: a magnitude-weighted sum against the plain mean of unit vectors
E2, y2, _ = synthetic_identity_embeddings(50, 8, 8, 1.4, seed=0)
templates = build_templates(y2, 4, seed=0)
tp = template_protocol(templates)
for rule in ("mean", "magface_plus"):
    ts = pair_scores(tp, aggregate_templates(E2, templates, rule))
    table = verification_table(ts[tp.is_genuine], ts[~tp.is_genuine], [0.01])
    print(f"{rule:13s} TAR@FAR=0.01 {table[0.01]:.3f}")
