"""Batched angular-margin losses with analytic gradients.

Four margin variants share one engine:

* ``arcface``    target logit s*cos(theta_y + m)
* ``magface``    target logit s*cos(theta_y + m(a)) plus lambda_g*g(a)
* ``cosface``    target logit s*(cos(theta_y) - m)
* ``magcosface`` target logit s*(cos(theta_y) - m(a)) plus lambda_g*g(a)

A plain (unnormalized) softmax cross-entropy is included as the baseline used
by the toy trainer. Everything is float64 numpy; no autodiff.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DomainError
from .magparams import margin, margin_deriv, regularizer, regularizer_deriv

COS_EPS = 1e-7


@dataclass
class FeatureBatch:
    """Unnormalized embeddings (N x d) with integer labels."""

    values: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.labels.shape[0] != self.values.shape[0]:
            raise DomainError(
                f"{self.values.shape[0]} feature rows but {self.labels.shape[0]} labels"
            )

    @property
    def magnitudes(self):
        return np.linalg.norm(self.values, axis=1)

    def __len__(self):
        return self.values.shape[0]


@dataclass
class ClassHead:
    """Class-center rows (n x d); renormalized inside every forward pass."""

    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.atleast_2d(np.asarray(self.weights, dtype=np.float64))

    @property
    def n_classes(self):
        return self.weights.shape[0]


@dataclass
class LossBreakdown:
    magnitude: np.ndarray
    cos_theta_y: np.ndarray
    margin_applied: np.ndarray
    A_term: np.ndarray
    B_term: np.ndarray
    reg_term: np.ndarray
    losses: np.ndarray
    fallback: np.ndarray
    batch_mean: float
    grad_features: np.ndarray = field(default=None, repr=False)
    grad_head: np.ndarray = field(default=None, repr=False)

    @property
    def fallback_rate(self):
        return float(np.mean(self.fallback)) if self.fallback.size else 0.0


def _normalize_rows(x, what):
    norms = np.linalg.norm(x, axis=1)
    if np.any(~(norms > 0)):
        raise DomainError(f"{what} contains a zero-norm row")
    return x / norms[:, None], norms


def _check(batch, head):
    if head.n_classes < 2:
        raise ConfigurationError("need at least two classes (the competitor sum is empty)")
    if batch.values.shape[1] != head.weights.shape[1]:
        raise DomainError(
            f"feature dim {batch.values.shape[1]} != head dim {head.weights.shape[1]}"
        )
    y = batch.labels
    if y.size and (y.min() < 0 or y.max() >= head.n_classes):
        raise DomainError("label outside [0, n_classes)")


def cosine_logits(batch, head):
    """Matrix of cos(theta_ij) between normalized features and class centers.

    Entries are clamped to [-1 + 1e-7, 1 - 1e-7].
    """
    if batch.values.shape[1] != head.weights.shape[1]:
        raise DomainError("feature and head dimensions differ")
    u, _ = _normalize_rows(batch.values, "feature batch")
    w, _ = _normalize_rows(head.weights, "class head")
    return np.clip(u @ w.T, -1.0 + COS_EPS, 1.0 - COS_EPS)


def _row_logsumexp(X):
    # scipy's logsumexp costs ~20x more on these tiny rows; rows may be all -inf
    top = np.max(X, axis=1)
    shift = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        return shift + np.log(np.sum(np.exp(X - shift[:, None]), axis=1))


def _engine(batch, head, *, kind, s, margins, margin_grads, lam, reg_p, grad):
    """Shared forward/backward for the four margin variants.

    ``margins``/``margin_grads`` are per-sample m(a_i) and dm/da_i arrays.
    ``reg_p`` is the MagParams providing g (ignored when ``lam == 0``).
    """
    _check(batch, head)
    F, y = batch.values, batch.labels
    N = F.shape[0]
    rows = np.arange(N)

    U, a = _normalize_rows(F, "feature batch")
    What, wn = _normalize_rows(head.weights, "class head")
    raw = U @ What.T
    c = np.clip(raw, -1.0 + COS_EPS, 1.0 - COS_EPS)
    cy = c[rows, y]
    m = margins

    if kind == "arc":
        sin_t = np.sqrt(np.maximum(0.0, 1.0 - cy * cy))
        cos_m, sin_m = np.cos(m), np.sin(m)
        # theta + m > pi  <=>  cos(theta) < cos(pi - m) = -cos(m)
        fallback = cy < -cos_m
        A = np.where(fallback, s * (cy - m * sin_m), s * (cy * cos_m - sin_t * sin_m))
    else:
        fallback = np.zeros(N, dtype=bool)
        A = s * (cy - m)

    Z = s * c
    Z[rows, y] = A
    others = s * c.copy()
    others[rows, y] = -np.inf
    log_B = _row_logsumexp(others)
    lse = np.logaddexp(log_B, A)

    if lam != 0.0:
        a_cl = reg_p.clamp(a)
        reg = lam * regularizer(a_cl, reg_p)
    else:
        reg = np.zeros(N)
    # softplus(log B - A) keeps full relative precision when the loss is tiny
    losses = np.logaddexp(0.0, log_B - A) + reg
    out = LossBreakdown(
        magnitude=a,
        cos_theta_y=cy,
        margin_applied=np.asarray(m, dtype=float) * np.ones(N),
        A_term=A,
        B_term=np.exp(log_B),
        reg_term=reg,
        losses=losses,
        fallback=fallback,
        batch_mean=math.fsum(losses) / N if N else 0.0,
    )
    if not grad:
        return out

    G = np.exp(Z - lse[:, None])
    G[rows, y] = -np.exp(log_B - lse)  # p_y - 1 without cancellation
    G /= N  # dL_mean / dZ

    if kind == "arc":
        safe_sin = np.where(sin_t > 0, sin_t, 1.0)
        dA_dc = np.where(fallback, s, s * (cos_m + cy / safe_sin * sin_m))
        dA_dm = np.where(fallback, -s * (sin_m + m * np.cos(m)), -s * (sin_t * cos_m + cy * sin_m))
    else:
        dA_dc = np.full(N, float(s))
        dA_dm = np.full(N, -float(s))

    Gc = s * G
    Gc[rows, y] = G[rows, y] * dA_dc
    Gc[raw != c] = 0.0

    dL_da = G[rows, y] * dA_dm * margin_grads
    if lam != 0.0:
        inside = (a > reg_p.l_a) & (a < reg_p.u_a)
        dL_da = dL_da + np.where(inside, lam * regularizer_deriv(a_cl, reg_p), 0.0) / N

    gU = Gc @ What
    gW = Gc.T @ U
    out.grad_features = (gU - np.sum(gU * U, axis=1, keepdims=True) * U) / a[:, None] + dL_da[:, None] * U
    out.grad_head = (gW - np.sum(gW * What, axis=1, keepdims=True) * What) / wn[:, None]
    return out


def _const_margin(m, N):
    if not 0.0 <= m <= np.pi:
        raise DomainError(f"margin must lie in [0, pi], got {m}")
    return np.full(N, float(m)), np.zeros(N)


def _mag_margin(batch, p, margin_fn, margin_deriv_fn):
    a = batch.magnitudes
    if margin_fn is None:
        return np.asarray(margin(a, p), dtype=float), np.asarray(margin_deriv(a, p), dtype=float)
    m = np.asarray(margin_fn(a), dtype=float) * np.ones_like(a)
    dm = np.zeros_like(a) if margin_deriv_fn is None else np.asarray(margin_deriv_fn(a), dtype=float) * np.ones_like(a)
    return m, dm


def magface_forward(batch, head, p, margin_fn=None, margin_deriv_fn=None):
    """MagFace loss per sample and batch mean, without gradients.

    ``margin_fn`` (with optional ``margin_deriv_fn``) replaces m(a); it is
    how the constant-margin reduction to ArcFace is expressed.
    """
    m, dm = _mag_margin(batch, p, margin_fn, margin_deriv_fn)
    return _engine(batch, head, kind="arc", s=p.s, margins=m, margin_grads=dm,
                   lam=p.lambda_g, reg_p=p, grad=False)


def magface_backward(batch, head, p, margin_fn=None, margin_deriv_fn=None):
    m, dm = _mag_margin(batch, p, margin_fn, margin_deriv_fn)
    return _engine(batch, head, kind="arc", s=p.s, margins=m, margin_grads=dm,
                   lam=p.lambda_g, reg_p=p, grad=True)


def magcosface_forward(batch, head, p, margin_fn=None, margin_deriv_fn=None):
    m, dm = _mag_margin(batch, p, margin_fn, margin_deriv_fn)
    return _engine(batch, head, kind="cos", s=p.s, margins=m, margin_grads=dm,
                   lam=p.lambda_g, reg_p=p, grad=False)


def magcosface_backward(batch, head, p, margin_fn=None, margin_deriv_fn=None):
    m, dm = _mag_margin(batch, p, margin_fn, margin_deriv_fn)
    return _engine(batch, head, kind="cos", s=p.s, margins=m, margin_grads=dm,
                   lam=p.lambda_g, reg_p=p, grad=True)


def arcface_forward(batch, head, s, m):
    mm, dm = _const_margin(m, len(batch))
    return _engine(batch, head, kind="arc", s=s, margins=mm, margin_grads=dm,
                   lam=0.0, reg_p=None, grad=False)


def arcface_backward(batch, head, s, m):
    mm, dm = _const_margin(m, len(batch))
    return _engine(batch, head, kind="arc", s=s, margins=mm, margin_grads=dm,
                   lam=0.0, reg_p=None, grad=True)


def cosface_forward(batch, head, s, m):
    mm, dm = _const_margin(m, len(batch))
    return _engine(batch, head, kind="cos", s=s, margins=mm, margin_grads=dm,
                   lam=0.0, reg_p=None, grad=False)


def cosface_backward(batch, head, s, m):
    mm, dm = _const_margin(m, len(batch))
    return _engine(batch, head, kind="cos", s=s, margins=mm, margin_grads=dm,
                   lam=0.0, reg_p=None, grad=True)


def softmax_forward(batch, head, grad=False):
    """Plain cross-entropy on unnormalized logits f_i . w_j (no margin, no scale)."""
    _check(batch, head)
    F, W, y = batch.values, head.weights, batch.labels
    N = F.shape[0]
    rows = np.arange(N)
    a = np.linalg.norm(F, axis=1)
    Z = F @ W.T
    others = Z.copy()
    others[rows, y] = -np.inf
    log_B = _row_logsumexp(others)
    lse = np.logaddexp(log_B, Z[rows, y])
    losses = np.logaddexp(0.0, log_B - Z[rows, y])
    with np.errstate(over="ignore"):
        # raw logits are unbounded; B may legitimately overflow to inf
        B_term = np.exp(log_B)
    out = LossBreakdown(
        magnitude=a,
        cos_theta_y=cosine_logits(batch, head)[rows, y],
        margin_applied=np.zeros(N),
        A_term=Z[rows, y],
        B_term=B_term,
        reg_term=np.zeros(N),
        losses=losses,
        fallback=np.zeros(N, dtype=bool),
        batch_mean=math.fsum(losses) / N if N else 0.0,
    )
    if grad:
        G = np.exp(Z - lse[:, None])
        G[rows, y] = -np.exp(log_B - lse)
        G /= N
        out.grad_features = G @ W
        out.grad_head = G.T @ F
    return out


def softmax_backward(batch, head):
    return softmax_forward(batch, head, grad=True)


def finite_diff_grad(loss_fn, batch, head, p, h=1e-4):
    """Central-difference gradient of ``loss_fn(batch, head, p)``.

    ``loss_fn`` may return a float or a :class:`LossBreakdown` (its batch
    mean is used). Returns ``(grad_features, grad_head)``.
    """
    if not h > 0:
        raise DomainError("step h must be positive")

    def value(b, hd):
        r = loss_fn(b, hd, p)
        return float(r.batch_mean if isinstance(r, LossBreakdown) else r)

    F = batch.values.copy()
    W = head.weights.copy()
    gF = np.zeros_like(F)
    gW = np.zeros_like(W)
    for idx in np.ndindex(*F.shape):
        orig = F[idx]
        F[idx] = orig + h
        up = value(FeatureBatch(F.copy(), batch.labels), head)
        F[idx] = orig - h
        dn = value(FeatureBatch(F.copy(), batch.labels), head)
        F[idx] = orig
        gF[idx] = (up - dn) / (2 * h)
    for idx in np.ndindex(*W.shape):
        orig = W[idx]
        W[idx] = orig + h
        up = value(batch, ClassHead(W.copy()))
        W[idx] = orig - h
        dn = value(batch, ClassHead(W.copy()))
        W[idx] = orig
        gW[idx] = (up - dn) / (2 * h)
    return gF, gW


def max_relative_error(analytic, numeric, rel_floor=1e-4):
    """Largest coordinate-wise |x - y| / max(|x|, |y|, rel_floor * scale).

    ``scale`` is the largest absolute entry of either array, so coordinates
    many orders below the gradient's size (where central differences only
    see roundoff) are compared absolutely against that scale.
    """
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    if analytic.size == 0:
        return 0.0
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)))
    if scale == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), rel_floor * scale)
    return float(np.max(np.abs(analytic - numeric) / denom))


VARIANTS = ("softmax", "arcface", "cosface", "magface", "magcosface")


def loss_and_grad(variant, batch, head, params):
    """Dispatch used by the trainer: ``params`` is MagParams or an (s, m) pair."""
    if variant == "softmax":
        return softmax_backward(batch, head)
    if variant == "magface":
        return magface_backward(batch, head, params)
    if variant == "magcosface":
        return magcosface_backward(batch, head, params)
    s, m = params
    if variant == "arcface":
        return arcface_backward(batch, head, s, m)
    if variant == "cosface":
        return cosface_backward(batch, head, s, m)
    raise ConfigurationError(f"unknown loss variant {variant!r}")
