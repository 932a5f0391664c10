"""Quality-based rejection curves and multi-sample identity aggregation."""

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import DegenerateAggregationError, DomainError
from .verification import PairProtocol, fnmr_at_fmr, pair_scores


@dataclass
class QualityScores:
    values: np.ndarray
    source: str = "magnitude"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if not np.all(np.isfinite(self.values)):
            raise DomainError("quality scores must be finite")
        if self.source not in ("magnitude", "external"):
            raise DomainError(f"unknown quality source {self.source!r}")

    @classmethod
    def from_magnitudes(cls, embeddings):
        return cls(np.linalg.norm(np.asarray(embeddings, dtype=float), axis=1), "magnitude")


@dataclass
class RejectCurve:
    reject_fractions: np.ndarray
    fnmr_values: np.ndarray
    valid: np.ndarray
    fmr_target: float
    thresholds: np.ndarray = field(default=None)
    n_rejected: np.ndarray = field(default=None)

    def __post_init__(self):
        if not (len(self.reject_fractions) == len(self.fnmr_values) == len(self.valid)):
            raise DomainError("curve arrays must have equal length")

    def header(self):
        return {
            "fmr_target": self.fmr_target,
            "threshold_rule": "recomputed per reject level on surviving impostor pairs",
            "pair_rule": "pair dropped if either embedding is rejected",
        }


def rejected_mask(qualities, fraction):
    """Embeddings rejected at ``fraction``.

    Up to floor(fraction * M) lowest-quality embeddings are dropped; a tie
    group straddling the cut is kept whole, so equal qualities are never
    separated.
    """
    q = np.asarray(qualities, dtype=float)
    M = q.size
    k = int(math.floor(fraction * M + 1e-9))
    if k <= 0:
        return np.zeros(M, dtype=bool)
    cutoff = np.sort(q)[min(k, M - 1)] if k < M else np.inf
    return q < cutoff


def error_versus_reject(protocol, embeddings, qualities, fractions, fmr_target):
    """FNMR at ``fmr_target`` after rejecting the lowest-quality embeddings."""
    fractions = np.asarray(fractions, dtype=float)
    if np.any(np.diff(fractions) <= 0):
        raise DomainError("reject fractions must be strictly ascending")
    if np.any((fractions < 0) | (fractions >= 1)):
        raise DomainError("reject fractions must lie in [0, 1)")
    q = qualities.values if isinstance(qualities, QualityScores) else np.asarray(qualities, dtype=float)
    E = np.asarray(embeddings, dtype=float)
    if q.shape[0] != E.shape[0]:
        raise DomainError("one quality score per embedding is required")
    scores = pair_scores(protocol, E)

    fnmr, valid, thr, nrej = [], [], [], []
    for r in fractions:
        drop = rejected_mask(q, r)
        keep = ~(drop[protocol.index_a] | drop[protocol.index_b])
        gen = scores[keep & protocol.is_genuine]
        imp = scores[keep & ~protocol.is_genuine]
        nrej.append(int(drop.sum()))
        if gen.size == 0 or imp.size == 0:
            fnmr.append(np.nan)
            thr.append(np.nan)
            valid.append(False)
            continue
        t, f = fnmr_at_fmr(gen, imp, fmr_target)
        fnmr.append(f)
        thr.append(t)
        valid.append(True)
    return RejectCurve(fractions, np.array(fnmr), np.array(valid), float(fmr_target),
                       np.array(thr), np.array(nrej))


def _stack(features):
    F = np.atleast_2d(np.asarray(features, dtype=float))
    if F.shape[0] == 0:
        raise DomainError("cannot aggregate an empty feature list")
    norms = np.linalg.norm(F, axis=1)
    if np.any(norms == 0):
        raise DomainError("cannot aggregate a zero vector")
    return F, norms


def _unit(v, scale):
    n = np.linalg.norm(v)
    if n <= 1e-12 * scale:
        raise DegenerateAggregationError("aggregated features cancel out")
    return v / n


def aggregate_mean(features):
    """Normalize, sum, normalize: every sample gets equal weight."""
    F, norms = _stack(features)
    return _unit(np.sum(F / norms[:, None], axis=0), F.shape[0])


def aggregate_magface_plus(features):
    """Sum raw features and normalize: directions weighted by their magnitude."""
    F, norms = _stack(features)
    return _unit(np.sum(F, axis=0), float(np.sum(norms)))


def build_templates(labels, template_size, seed=0):
    """Split each identity's samples into templates of ``template_size``.

    Returns a list of ``(label, index_array)``; leftovers smaller than
    ``template_size`` are discarded.
    """
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    templates = []
    for lab in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == lab))
        for s in range(0, idx.size - template_size + 1, template_size):
            templates.append((int(lab), np.sort(idx[s:s + template_size])))
    return templates


def aggregate_templates(embeddings, templates, rule):
    if rule not in ("mean", "magface_plus"):
        raise DomainError(f"unknown aggregation rule {rule!r}")
    agg = aggregate_magface_plus if rule == "magface_plus" else aggregate_mean
    E = np.asarray(embeddings, dtype=float)
    return np.array([agg(E[idx]) for _, idx in templates])


def template_protocol(templates):
    return PairProtocol.all_pairs(np.array([lab for lab, _ in templates]))
