"""Synthetic quality-controlled data and a small dense embedding trainer.

Each class has a prototype direction on the unit sphere of the input space.
A sample of quality ``q`` is its prototype rotated by ``(1 - q) * noise_max``
radians in a random tangent direction, so low quality means a large angular
perturbation. A two-layer tanh network maps inputs to unnormalized embeddings
and is trained jointly with a class head under one of the losses in
:mod:`magface_lab.losses`.
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .errors import ConfigurationError, DomainError, StatisticsError, TrainingDivergence
from .losses import VARIANTS, ClassHead, FeatureBatch, cosine_logits, loss_and_grad
from .magparams import MagParams


@dataclass(frozen=True)
class SyntheticSpec:
    n_classes: int = 8
    dim_input: int = 32
    dim_embed: int = 16
    samples_per_class: int = 200
    quality_noise_max: float = 1.2
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise DomainError("n_classes must be at least 2")
        if self.dim_input < 2 or self.dim_embed < 2:
            raise DomainError("dimensions must be at least 2")
        if self.samples_per_class < 1:
            raise DomainError("samples_per_class must be at least 1")
        if not 0.0 <= self.quality_noise_max <= math.pi / 2:
            raise DomainError("quality_noise_max must lie in [0, pi/2]")


@dataclass(frozen=True)
class LabeledSample:
    input: np.ndarray
    label: int
    true_quality: float


@dataclass
class SyntheticDataset:
    """Array-backed sequence of :class:`LabeledSample` (class-major order)."""

    inputs: np.ndarray
    labels: np.ndarray
    qualities: np.ndarray
    prototypes: np.ndarray
    dim_embed: int = 16

    def __len__(self):
        return self.inputs.shape[0]

    def __getitem__(self, i):
        return LabeledSample(self.inputs[i], int(self.labels[i]), float(self.qualities[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))


def _rotate_towards_tangent(proto, angle, rng):
    t = rng.standard_normal(proto.shape[0])
    t -= (t @ proto) * proto
    t /= np.linalg.norm(t)
    return math.cos(angle) * proto + math.sin(angle) * t


def generate_dataset(spec, split=0):
    """Deterministic dataset for ``spec``.

    ``split`` selects an independent sample draw around the same class
    prototypes (0 = train, 1 = test, ...).
    """
    proto_rng = np.random.default_rng([spec.seed, 0])
    protos = proto_rng.standard_normal((spec.n_classes, spec.dim_input))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)

    X, y, q = [], [], []
    for c in range(spec.n_classes):
        rng = np.random.default_rng([spec.seed, 1 + split, c])
        for _ in range(spec.samples_per_class):
            qual = rng.uniform()
            X.append(_rotate_towards_tangent(protos[c], (1.0 - qual) * spec.quality_noise_max, rng))
            y.append(c)
            q.append(qual)
    return SyntheticDataset(np.array(X), np.array(y, dtype=np.int64), np.array(q), protos, spec.dim_embed)


def within_class_spread(dataset):
    """Mean angle (radians) between samples and their class prototype."""
    cos = np.sum(dataset.inputs * dataset.prototypes[dataset.labels], axis=1)
    return float(np.mean(np.arccos(np.clip(cos, -1.0, 1.0))))


# --- model -------------------------------------------------------------------

@dataclass
class EmbeddingModel:
    """Two dense layers: tanh hidden layer, linear bias-free embedding layer."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    head: np.ndarray

    def embed(self, X):
        return np.tanh(X @ self.W1.T + self.b1) @ self.W2.T

    def arrays(self):
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "head": self.head}

    def to_flat(self):
        """Flat little-endian float64 buffer plus a shape manifest."""
        names = ["W1", "b1", "W2", "head"]
        flat = np.concatenate([getattr(self, k).ravel() for k in names]).astype("<f8")
        manifest = {"dtype": "float64", "byteorder": "little", "order": "C",
                    "arrays": [{"name": k, "shape": list(getattr(self, k).shape)} for k in names]}
        return flat.tobytes(), manifest

    @classmethod
    def from_flat(cls, buf, manifest):
        flat = np.frombuffer(buf, dtype="<f8")
        out, pos = {}, 0
        for entry in manifest["arrays"]:
            size = int(np.prod(entry["shape"]))
            out[entry["name"]] = flat[pos:pos + size].reshape(entry["shape"]).astype(np.float64)
            pos += size
        if pos != flat.size:
            raise DomainError("model buffer size does not match manifest")
        return cls(**out)


def init_model(dim_input, hidden, dim_embed, n_classes, seed, X_ref=None, init_magnitude=None):
    rng = np.random.default_rng([seed, 7])
    # inputs are unit vectors, so unit-variance rows give O(1) pre-activations
    W1 = rng.standard_normal((hidden, dim_input))
    b1 = np.zeros(hidden)
    W2 = rng.standard_normal((dim_embed, hidden)) / math.sqrt(hidden)
    head = rng.standard_normal((n_classes, dim_embed))
    head /= np.linalg.norm(head, axis=1, keepdims=True)
    model = EmbeddingModel(W1, b1, W2, head)
    if init_magnitude is not None and X_ref is not None:
        med = float(np.median(np.linalg.norm(model.embed(X_ref), axis=1)))
        model.W2 *= init_magnitude / med
    return model


# --- training ----------------------------------------------------------------

@dataclass
class TrainConfig:
    """Optimization settings.

    ``params`` is a MagParams for magface/magcosface, an ``(s, m)`` pair for
    arcface/cosface, and ignored for softmax. ``init_magnitude`` sets the
    median initial embedding norm.
    """

    loss_variant: str = "magface"
    params: object = field(default_factory=MagParams)
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 0.01
    lr_decay_epochs: tuple = (20, 26)
    lr_decay_factor: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    hidden: int = 64
    init_magnitude: float = 60.0

    def __post_init__(self):
        if self.loss_variant not in VARIANTS:
            raise ConfigurationError(f"unknown loss_variant {self.loss_variant!r}")
        if self.epochs <= 0 or self.batch_size <= 0 or not self.learning_rate > 0:
            raise ConfigurationError("epochs, batch_size and learning_rate must be positive")
        if self.loss_variant in ("magface", "magcosface") and not isinstance(self.params, MagParams):
            raise ConfigurationError(f"{self.loss_variant} needs MagParams")
        if self.loss_variant in ("arcface", "cosface"):
            if isinstance(self.params, MagParams) or len(self.params) != 2:
                raise ConfigurationError(f"{self.loss_variant} needs an (s, m) pair")
            self.params = tuple(float(v) for v in self.params)
        self.lr_decay_epochs = tuple(int(e) for e in self.lr_decay_epochs)

    def lr_at(self, epoch):
        """Step schedule: divided by 1/decay_factor at each decay epoch (0-based)."""
        return self.learning_rate * self.lr_decay_factor ** sum(epoch >= e for e in self.lr_decay_epochs)

    def to_dict(self):
        d = asdict(self)
        d["params"] = self.params.to_dict() if isinstance(self.params, MagParams) else self.params
        d["lr_decay_epochs"] = list(self.lr_decay_epochs)
        return d


@dataclass
class MagnitudeStats:
    magnitude: np.ndarray
    cos_theta: np.ndarray
    true_quality: np.ndarray
    labels: np.ndarray
    pearson_mag_cos: float
    spearman_mag_quality: float
    degenerate: list


@dataclass
class TrainReport:
    loss_history: list
    stats: MagnitudeStats
    train_accuracy: float
    fallback_rate: float
    model: EmbeddingModel = field(repr=False)
    initial_median_magnitude: float = float("nan")

    @property
    def pearson_mag_cos(self):
        return self.stats.pearson_mag_cos

    @property
    def spearman_mag_quality(self):
        return self.stats.spearman_mag_quality

    def summary(self):
        return {
            "loss_history": list(self.loss_history),
            "pearson_mag_cos": self.pearson_mag_cos,
            "spearman_mag_quality": self.spearman_mag_quality,
            "train_accuracy": self.train_accuracy,
            "fallback_rate": self.fallback_rate,
            "degenerate_statistics": list(self.stats.degenerate),
            "mean_magnitude": float(np.mean(self.stats.magnitude)),
            "initial_median_magnitude": self.initial_median_magnitude,
        }


def train(dataset, cfg):
    """Mini-batch SGD with momentum; weight decay on network weights only.

    Raises:
      TrainingDivergence: a batch loss or the embeddings stop being finite.
    """
    if len(dataset) == 0:
        raise DomainError("empty dataset")
    X, y = dataset.inputs, dataset.labels
    n_classes = max(int(y.max()) + 1, dataset.prototypes.shape[0])
    model = init_model(X.shape[1], cfg.hidden, dataset.dim_embed, n_classes, cfg.seed,
                       X_ref=X, init_magnitude=cfg.init_magnitude)
    init_median = float(np.median(np.linalg.norm(model.embed(X), axis=1)))
    rng = np.random.default_rng([cfg.seed, 11])
    vel = {k: np.zeros_like(v) for k, v in model.arrays().items()}
    N = len(dataset)

    with np.errstate(over="ignore", invalid="ignore"):
        history, fallback_count = _sgd_epochs(model, X, y, cfg, rng, vel)
    st = collect_magnitude_stats(model, dataset)
    pred = np.argmax(cosine_logits(FeatureBatch(model.embed(X), y), ClassHead(model.head)), axis=1)
    return TrainReport(
        loss_history=history,
        stats=st,
        train_accuracy=float(np.mean(pred == y)),
        fallback_rate=fallback_count / (N * cfg.epochs),
        model=model,
        initial_median_magnitude=init_median,
    )


def _sgd_epochs(model, X, y, cfg, rng, vel):
    """Runs the epochs in place on ``model``; returns (loss history, fallbacks)."""
    N = X.shape[0]
    history = []
    fallback_count = 0
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = rng.permutation(N)
        total = 0.0
        for start in range(0, N, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            Xb = X[idx]
            pre = Xb @ model.W1.T + model.b1
            H = np.tanh(pre)
            F = H @ model.W2.T
            if not np.all(np.isfinite(F)) or np.any(np.linalg.norm(F, axis=1) == 0):
                raise TrainingDivergence(epoch, f"degenerate embeddings at epoch {epoch}")
            out = loss_and_grad(cfg.loss_variant, FeatureBatch(F, y[idx]), ClassHead(model.head), cfg.params)
            if not math.isfinite(out.batch_mean):
                raise TrainingDivergence(epoch)
            total += out.batch_mean * len(idx)
            fallback_count += int(np.sum(out.fallback))

            gF = out.grad_features
            gW2 = gF.T @ H
            gPre = (gF @ model.W2) * (1.0 - H * H)
            grads = {
                "W1": gPre.T @ Xb + cfg.weight_decay * model.W1,
                "b1": gPre.sum(axis=0),
                "W2": gW2 + cfg.weight_decay * model.W2,
                "head": out.grad_head,
            }
            for k, g in grads.items():
                vel[k] = cfg.momentum * vel[k] + g
                setattr(model, k, getattr(model, k) - lr * vel[k])
        mean = total / N
        if not math.isfinite(mean):
            raise TrainingDivergence(epoch)
        history.append(mean)
    return history, fallback_count


def pearson(x, y):
    """Pearson correlation, or ``None`` when either input has zero variance."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 3:
        raise StatisticsError("need at least 3 samples")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt(dx @ dx), math.sqrt(dy @ dy)
    if sx == 0 or sy == 0:
        return None
    return float(np.clip((dx @ dy) / (sx * sy), -1.0, 1.0))


def spearman(x, y):
    """Spearman rank correlation (average ranks for ties)."""
    if len(x) < 3:
        raise StatisticsError("need at least 3 samples")
    return pearson(stats.rankdata(x), stats.rankdata(y))


def collect_magnitude_stats(model, dataset):
    if len(dataset) < 3:
        raise StatisticsError("need at least 3 samples")
    F = model.embed(dataset.inputs)
    a = np.linalg.norm(F, axis=1)
    cos = cosine_logits(FeatureBatch(F, dataset.labels), ClassHead(model.head))
    cy = cos[np.arange(len(dataset)), dataset.labels]
    pr = pearson(a, cy)
    sp = spearman(a, dataset.qualities)
    degenerate = [name for name, v in (("pearson_mag_cos", pr), ("spearman_mag_quality", sp)) if v is None]
    return MagnitudeStats(
        magnitude=a, cos_theta=cy, true_quality=np.asarray(dataset.qualities, dtype=float),
        labels=np.asarray(dataset.labels), pearson_mag_cos=pr, spearman_mag_quality=sp,
        degenerate=degenerate,
    )


def synthetic_identity_embeddings(n_identities, samples_per_identity, dim, noise_max,
                                  l_a=10.0, u_a=110.0, seed=0):
    """Embeddings whose magnitude encodes quality, for aggregation experiments.

    A sample of quality q sits ``(1 - q) * noise_max`` radians from its
    identity center with magnitude ``l_a + q * (u_a - l_a)``. Returns
    ``(embeddings, labels, qualities)``.
    """
    rng = np.random.default_rng([seed, 3])
    centers = rng.standard_normal((n_identities, dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    E, y, q = [], [], []
    for c in range(n_identities):
        for _ in range(samples_per_identity):
            qual = rng.uniform()
            u = _rotate_towards_tangent(centers[c], (1.0 - qual) * noise_max, rng)
            E.append((l_a + qual * (u_a - l_a)) * u)
            y.append(c)
            q.append(qual)
    return np.array(E), np.array(y, dtype=np.int64), np.array(q)
