"""K-means, average-linkage AHC and DBSCAN on cosine geometry, plus NMI and BCubed.

Inputs are L2-normalized before clustering. Cluster ids are relabeled to
0..k-1 in order of first appearance; DBSCAN noise keeps id -1.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.hierarchy import cut_tree, linkage
from sklearn.cluster import DBSCAN

from ..errors import DomainError


@dataclass
class ClusteringResult:
    assignment: np.ndarray
    objective_history: list = field(default_factory=list)

    @property
    def n_clusters(self):
        return len(set(self.assignment.tolist()) - {-1})


def _normalize(embeddings):
    E = np.atleast_2d(np.asarray(embeddings, dtype=float))
    if E.shape[0] == 0:
        raise DomainError("no embeddings to cluster")
    n = np.linalg.norm(E, axis=1)
    if np.any(n == 0):
        raise DomainError("cannot cluster a zero vector")
    return E / n[:, None]


def relabel(assignment):
    """Contiguous ids in order of first appearance; -1 is preserved."""
    out = np.full(len(assignment), -1, dtype=np.int64)
    seen = {}
    for i, c in enumerate(np.asarray(assignment).tolist()):
        if c == -1:
            continue
        out[i] = seen.setdefault(c, len(seen))
    return out


def _sq_dists(X, C):
    d = np.sum(X * X, axis=1)[:, None] - 2.0 * X @ C.T + np.sum(C * C, axis=1)[None, :]
    return np.maximum(d, 0.0)


def _kmeanspp(X, k, rng):
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = _sq_dists(X, X[chosen])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            rest = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rng.choice(rest))
        chosen.append(nxt)
        d2 = np.minimum(d2, _sq_dists(X, X[[nxt]])[:, 0])
    return X[chosen].copy()


def kmeans(embeddings, k, seed=0, max_iter=300, tol=1e-6):
    """Lloyd iterations from k-means++ seeding on normalized inputs.

    ``objective_history`` records the within-cluster sum of squares after
    every assignment step; it never increases.
    """
    X = _normalize(embeddings)
    if not 1 <= k <= X.shape[0]:
        raise DomainError(f"k={k} must lie in [1, {X.shape[0]}]")
    rng = np.random.default_rng(seed)
    C = _kmeanspp(X, k, rng)
    history = []
    for _ in range(max_iter):
        D = _sq_dists(X, C)
        assign = np.argmin(D, axis=1)
        obj = float(D[np.arange(X.shape[0]), assign].sum())
        history.append(obj)
        newC = C.copy()
        for j in range(k):
            members = X[assign == j]
            if members.shape[0]:
                newC[j] = members.mean(axis=0)
        shift = float(np.max(np.abs(newC - C)))
        C = newC
        if len(history) > 1 and history[-2] - obj <= tol * max(history[-2], 1e-300):
            break
        if shift <= tol:
            break
    return ClusteringResult(relabel(assign), history)


def ahc(embeddings, k):
    """Average-linkage agglomerative clustering on cosine distance, cut at k."""
    X = _normalize(embeddings)
    n = X.shape[0]
    if not 1 <= k <= n:
        raise DomainError(f"k={k} must lie in [1, {n}]")
    if n == 1:
        return ClusteringResult(np.zeros(1, dtype=np.int64))
    Z = linkage(X, method="average", metric="cosine")
    return ClusteringResult(relabel(cut_tree(Z, n_clusters=k).reshape(-1)))


def cosine_distance_matrix(embeddings):
    X = _normalize(embeddings)
    D = np.clip(1.0 - X @ X.T, 0.0, 2.0)
    np.fill_diagonal(D, 0.0)
    return D


def dbscan(embeddings, eps, min_pts):
    """Density clustering on cosine distance; noise points get id -1."""
    if not eps > 0 or min_pts < 1:
        raise DomainError("eps must be positive and min_pts at least 1")
    D = cosine_distance_matrix(embeddings)
    labels = DBSCAN(eps=eps, min_samples=int(min_pts), metric="precomputed").fit_predict(D)
    return ClusteringResult(relabel(labels))


def _as_labels(x):
    if isinstance(x, ClusteringResult):
        x = x.assignment
    return np.asarray(x).reshape(-1)


def _noise_to_singletons(x):
    x = np.asarray(x, dtype=np.int64).copy()
    noise = x == -1
    if noise.any():
        x[noise] = x.max(initial=-1) + 1 + np.arange(noise.sum())
    return x


def _contingency(a, b):
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max() + 1, ib.max() + 1), dtype=np.int64)
    np.add.at(table, (ia, ib), 1)
    return table, ia, ib


def _entropy(counts, n):
    p = counts[counts > 0] / n
    return float(-np.sum(p * np.log(p)))


def nmi(assignment_a, assignment_b):
    """Mutual information over the arithmetic mean of the two entropies.

    Noise ids (-1) count as singleton clusters.
    """
    a, b = _as_labels(assignment_a), _as_labels(assignment_b)
    if a.shape != b.shape:
        raise DomainError("assignments must have equal length")
    n = a.size
    if n == 0:
        raise DomainError("empty assignments")
    table, _, _ = _contingency(_noise_to_singletons(a), _noise_to_singletons(b))
    ha = _entropy(table.sum(axis=1), n)
    hb = _entropy(table.sum(axis=0), n)
    if ha + hb == 0:
        return 1.0
    nz = table > 0
    outer = np.outer(table.sum(axis=1), table.sum(axis=0))
    mi = float(np.sum(table[nz] / n * np.log(n * table[nz] / outer[nz])))
    return float(np.clip(mi / (0.5 * (ha + hb)), 0.0, 1.0))


def bcubed_f(pred, truth):
    """Item-averaged BCubed precision and recall and their harmonic mean."""
    p, t = _as_labels(pred), _as_labels(truth)
    if p.shape != t.shape:
        raise DomainError("assignments must have equal length")
    if p.size == 0:
        raise DomainError("empty assignments")
    table, ip, it = _contingency(_noise_to_singletons(p), _noise_to_singletons(t))
    overlap = table[ip, it].astype(float)
    precision = float(np.mean(overlap / table.sum(axis=1)[ip]))
    recall = float(np.mean(overlap / table.sum(axis=0)[it]))
    f = 2.0 * precision * recall / (precision + recall)
    return precision, recall, f


def clustering_report(method, params, result, truth):
    pr, rc, f = bcubed_f(result, truth)
    return {
        "method": method,
        "params": params,
        "nmi": nmi(result, truth),
        "bcubed_precision": pr,
        "bcubed_recall": rc,
        "bcubed_f": f,
    }
