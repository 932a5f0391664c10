"""Loss hyperparameters, the linear margin m(a) and the hyperbolic regularizer g(a).

All functions accept either Python scalars or numpy arrays of magnitudes.
Scalar input gives a Python ``float`` back.
"""

import json
import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DomainError

JSON_KEYS = ("s", "l_a", "u_a", "l_m", "u_m", "lambda_g")


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


@dataclass(frozen=True)
class MagParams:
    """Hyperparameters of the magnitude-aware losses.

    Attributes:
      s: Logit scale.
      l_a, u_a: Magnitude interval on which m and g are defined.
      l_m, u_m: Margin values (radians) at ``l_a`` and ``u_a``.
      lambda_g: Regularizer weight.
    """

    s: float = 64.0
    l_a: float = 10.0
    u_a: float = 110.0
    l_m: float = 0.4
    u_m: float = 0.8
    lambda_g: float = 35.0

    def __post_init__(self):
        for name in JSON_KEYS:
            v = getattr(self, name)
            if not math.isfinite(v):
                raise DomainError(f"{name} must be finite, got {v!r}")
        if not self.s > 0:
            raise DomainError(f"s must be positive, got {self.s}")
        if not 0 < self.l_a < self.u_a:
            raise DomainError(f"need 0 < l_a < u_a, got l_a={self.l_a}, u_a={self.u_a}")
        if not 0 <= self.l_m < self.u_m <= math.pi:
            raise DomainError(f"need 0 <= l_m < u_m <= pi, got l_m={self.l_m}, u_m={self.u_m}")
        if self.lambda_g < 0:
            raise DomainError(f"lambda_g must be nonnegative, got {self.lambda_g}")
        if self.lambda_g < lambda_lower_bound(self):
            # Kept constructible so out-of-guarantee ablations remain expressible.
            warnings.warn(
                f"lambda_g={self.lambda_g} is below the convexity bound "
                f"{lambda_lower_bound(self):.6g}",
                stacklevel=3,
            )

    @property
    def K(self):
        """Slope of the linear margin, an upper bound on m'(a)."""
        return (self.u_m - self.l_m) / (self.u_a - self.l_a)

    @property
    def guarantees_hold(self):
        return self.lambda_g >= lambda_lower_bound(self) and self.u_m <= math.pi / 2

    def clamp(self, a):
        return np.clip(a, self.l_a, self.u_a)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d):
        keys = set(d)
        if keys != set(JSON_KEYS):
            missing = sorted(set(JSON_KEYS) - keys)
            extra = sorted(keys - set(JSON_KEYS))
            raise DomainError(f"MagParams keys mismatch: missing={missing} extra={extra}")
        return cls(**{k: float(d[k]) for k in JSON_KEYS})

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def margin(a, p):
    """Linear margin evaluated on the magnitude clamped to ``[l_a, u_a]``."""
    a = np.asarray(a, dtype=float)
    return _out(p.K * (p.clamp(a) - p.l_a) + p.l_m)


def margin_deriv(a, p):
    """Derivative of :func:`margin`; zero at and beyond the clamp points."""
    a = np.asarray(a, dtype=float)
    inside = (a > p.l_a) & (a < p.u_a)
    return _out(np.where(inside, p.K, 0.0))


def _check_positive(a):
    a = np.asarray(a, dtype=float)
    if np.any(~(a > 0)):
        raise DomainError("regularizer is defined for a > 0 only")
    return a


def regularizer(a, p):
    """g(a) = 1/a + a/u_a**2, strictly convex with its minimum at u_a."""
    a = _check_positive(a)
    return _out(1.0 / a + a / p.u_a**2)


def regularizer_deriv(a, p):
    a = _check_positive(a)
    return _out(-1.0 / a**2 + 1.0 / p.u_a**2)


def regularizer_second_deriv(a, p):
    a = _check_positive(a)
    return _out(2.0 / a**3)


def lambda_lower_bound(p):
    """Smallest lambda_g for which the convexity and optimum guarantees hold.

    Closed form s * u_a^2 l_a^2 / (u_a^2 - l_a^2) * (u_m - l_m) / (u_a - l_a),
    which equals s*K / (-g'(l_a)).
    """
    return (
        p.s * p.u_a**2 * p.l_a**2 / (p.u_a**2 - p.l_a**2)
        * (p.u_m - p.l_m) / (p.u_a - p.l_a)
    )


def lambda_lower_bound_generic(p):
    """The same bound written through the regularizer derivative."""
    return p.s * p.K / (-regularizer_deriv(p.l_a, p))


def mean_margin(magnitudes, p):
    """Mean margin over an empirical magnitude sample (used by ablations)."""
    a = np.asarray(magnitudes, dtype=float)
    if a.size == 0:
        raise DomainError("empty magnitude sample")
    return float(np.mean(margin(a, p)))


# (l_m, u_m) pairs of the margin-distribution ablation at lambda_g=35, l_a=10, u_a=110.
ABLATION_MARGINS = ((0.45, 0.65), (0.40, 0.80), (0.35, 1.00), (0.25, 1.60))


def ablation_params(s=64.0):
    """MagParams for every row of the margin-distribution ablation."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return [
            MagParams(s=s, l_a=10.0, u_a=110.0, l_m=lm, u_m=um, lambda_g=35.0)
            for lm, um in ABLATION_MARGINS
        ]
