"""1:1 verification: cosine scores, FNMR at a fixed FMR, TAR at a fixed FAR.

Threshold rule: a comparison is accepted when ``score >= t``. The threshold is
the smallest candidate whose false-match rate does not exceed the target,
where the candidates are ``-inf``, every distinct impostor score, and the
value just above the largest impostor score (accept nothing that any impostor
reached). Equal scores therefore always land on the same side.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import DomainError


@dataclass
class PairProtocol:
    """Pairs ``(index_a, index_b, is_genuine)`` into a shared embedding table."""

    index_a: np.ndarray
    index_b: np.ndarray
    is_genuine: np.ndarray

    def __post_init__(self):
        self.index_a = np.asarray(self.index_a, dtype=np.int64)
        self.index_b = np.asarray(self.index_b, dtype=np.int64)
        self.is_genuine = np.asarray(self.is_genuine, dtype=bool)
        if not (self.index_a.shape == self.index_b.shape == self.is_genuine.shape):
            raise DomainError("pair arrays must have equal length")

    @classmethod
    def from_pairs(cls, pairs):
        pairs = list(pairs)
        if not pairs:
            return cls(np.zeros(0), np.zeros(0), np.zeros(0))
        a, b, g = zip(*pairs)
        return cls(a, b, g)

    @classmethod
    def all_pairs(cls, labels):
        """Every unordered pair; genuine when the labels agree."""
        labels = np.asarray(labels)
        ia, ib = np.triu_indices(len(labels), k=1)
        return cls(ia, ib, labels[ia] == labels[ib])

    def __len__(self):
        return self.index_a.shape[0]

    @property
    def n_genuine(self):
        return int(self.is_genuine.sum())

    @property
    def n_impostor(self):
        return int((~self.is_genuine).sum())


def cosine_score(f_a, f_b):
    f_a = np.asarray(f_a, dtype=float)
    f_b = np.asarray(f_b, dtype=float)
    na, nb = np.linalg.norm(f_a), np.linalg.norm(f_b)
    if na == 0 or nb == 0:
        raise DomainError("cosine score of a zero vector")
    return float(np.clip(f_a @ f_b / (na * nb), -1.0, 1.0))


def pair_scores(protocol, embeddings):
    """Cosine score for every pair of ``protocol``."""
    E = np.asarray(embeddings, dtype=float)
    norms = np.linalg.norm(E, axis=1)
    if np.any(norms == 0):
        raise DomainError("embedding table contains a zero vector")
    U = E / norms[:, None]
    return np.clip(np.sum(U[protocol.index_a] * U[protocol.index_b], axis=1), -1.0, 1.0)


def _threshold(impostor, target):
    imp = np.sort(np.asarray(impostor, dtype=float))
    n = imp.size
    cands = np.concatenate([[-np.inf], np.unique(imp), [np.nextafter(imp[-1], np.inf)]])
    false_matches = n - np.searchsorted(imp, cands, side="left")
    allowed = np.floor(target * n + 1e-9)
    k = int(np.argmax(false_matches <= allowed))
    return float(cands[k])


def _check_scores(genuine, impostor, target, name):
    genuine = np.asarray(genuine, dtype=float).reshape(-1)
    impostor = np.asarray(impostor, dtype=float).reshape(-1)
    if genuine.size == 0 or impostor.size == 0:
        raise DomainError("genuine and impostor score lists must be nonempty")
    if not 0.0 < target <= 1.0:
        raise DomainError(f"{name} target must lie in (0, 1]")
    return genuine, impostor


def fnmr_at_fmr(genuine, impostor, fmr_target):
    """Return ``(threshold, fnmr)`` at the smallest threshold meeting ``fmr_target``."""
    genuine, impostor = _check_scores(genuine, impostor, fmr_target, "FMR")
    t = _threshold(impostor, fmr_target)
    return t, float(np.mean(genuine < t))


def tar_at_far(genuine, impostor, far_target):
    genuine, impostor = _check_scores(genuine, impostor, far_target, "FAR")
    t = _threshold(impostor, far_target)
    return float(np.mean(genuine >= t))


def verification_table(genuine, impostor, targets):
    return {float(t): tar_at_far(genuine, impostor, t) for t in targets}
