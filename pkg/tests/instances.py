"""Seeded random inputs shared by the test modules."""

import numpy as np

from magface_lab import ClassHead, FeatureBatch, MagParams


def random_instance(rng, max_n=8, max_d=16, max_classes=10, mag_range=(15.0, 105.0), head_norm=None):
    """A batch with magnitudes strictly inside the margin interval and a head.

    ``head_norm`` rescales every class row to that length; the margin losses
    only see row directions, so this just fixes the conditioning of finite
    differences with respect to the head.
    """
    N = int(rng.integers(1, max_n + 1))
    d = int(rng.integers(2, max_d + 1))
    n = int(rng.integers(2, max_classes + 1))
    U = rng.standard_normal((N, d))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    F = U * rng.uniform(*mag_range, size=(N, 1))
    W = rng.standard_normal((n, d))
    if head_norm is not None:
        W *= head_norm / np.linalg.norm(W, axis=1, keepdims=True)
    y = rng.integers(0, n, size=N)
    return FeatureBatch(F, y), ClassHead(W)


DEFAULTS = MagParams()
