"""Numerical certificates for the 1-D loss restricted to the magnitude variable.

With the angle to the own class center and the competitor mass
``B = sum_{j != y} exp(s cos theta_j)`` held fixed, the per-sample loss is a
function of the magnitude ``a`` alone::

    L(a) = log(1 + B exp(-A(a))) + lambda_g * g(a)

where ``A(a) = s cos(theta + m(a))`` (magface) or ``s (cos theta - m(a))``
(magcosface). This module evaluates that function and its derivative,
locates its minimizer, and checks convexity, endpoint signs and the two
monotonicity properties on seeded random configurations.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, gammaln, logsumexp

from .errors import ConfigurationError, DomainError, PropertyViolation
from .magparams import MagParams, regularizer, regularizer_deriv

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
SCALAR_VARIANTS = ("magface", "magcosface")


@dataclass(frozen=True)
class ScalarLossConfig:
    theta_y: float
    B: float
    params: MagParams = field(default_factory=MagParams)
    variant: str = "magface"

    def __post_init__(self):
        if not 0.0 <= self.theta_y <= math.pi:
            raise DomainError(f"theta_y must lie in [0, pi], got {self.theta_y}")
        if not self.B > 0:
            raise DomainError(f"B must be positive, got {self.B}")
        if self.variant not in SCALAR_VARIANTS:
            raise DomainError(f"unknown variant {self.variant!r}")

    def with_(self, **kw):
        d = dict(theta_y=self.theta_y, B=self.B, params=self.params, variant=self.variant)
        d.update(kw)
        return ScalarLossConfig(**d)


@dataclass
class OptimumReport:
    a_star: float
    loss_at_star: float
    deriv_at_la: float
    deriv_at_ua: float
    iterations: int


@dataclass
class CertificateResult:
    passed: bool
    worst: float


@dataclass
class MonotonicityResult:
    passed: bool
    a_stars: list
    worst_step: float


def _inside(a, p):
    a = np.asarray(a, dtype=float)
    if np.any((a < p.l_a) | (a > p.u_a)) or np.any(np.isnan(a)):
        raise DomainError(f"magnitude outside [{p.l_a}, {p.u_a}]")
    return a


def _target_logit(a, cfg):
    p = cfg.params
    m = p.K * (a - p.l_a) + p.l_m
    if cfg.variant == "magface":
        return p.s * np.cos(cfg.theta_y + m), m
    return p.s * (math.cos(cfg.theta_y) - m), m


def scalar_loss(a, cfg):
    """L(a) for fixed angle and competitor mass; no clamping, a must be in range."""
    p = cfg.params
    a = _inside(a, p)
    A, _ = _target_logit(a, cfg)
    out = np.logaddexp(0.0, math.log(cfg.B) - A) + p.lambda_g * regularizer(a, p)
    return float(out) if np.ndim(out) == 0 else out


def scalar_loss_deriv(a, cfg):
    """dL/da. At the interval ends the one-sided slope m' = K is used."""
    p = cfg.params
    a = _inside(a, p)
    A, m = _target_logit(a, cfg)
    w = expit(math.log(cfg.B) - A)  # B / (exp(A) + B)
    if cfg.variant == "magface":
        cls = w * p.s * p.K * np.sin(cfg.theta_y + m)
    else:
        cls = w * p.s * p.K
    out = cls + p.lambda_g * regularizer_deriv(a, p)
    return float(out) if np.ndim(out) == 0 else out


def scalar_loss_difference(a1, a2, cfg):
    """L(a2) - L(a1) without subtracting two rounded loss values.

    Near the minimizer the two losses agree to ~1e-17 while each carries
    ~1e-16 of rounding; this form keeps full relative precision so a
    comparison-based search can resolve the optimum far below sqrt(eps).
    """
    p = cfg.params
    a1 = float(_inside(a1, p))
    a2 = float(_inside(a2, p))
    reg = p.lambda_g * (a2 - a1) * (1.0 / p.u_a**2 - 1.0 / (a1 * a2))
    dm = p.K * (a2 - a1)
    if cfg.variant == "magface":
        m_mid = p.K * (0.5 * (a1 + a2) - p.l_a) + p.l_m
        d_logit = 2.0 * p.s * math.sin(cfg.theta_y + m_mid) * math.sin(0.5 * dm)  # A(a1) - A(a2)
    else:
        d_logit = p.s * dm
    A1, _ = _target_logit(a1, cfg)
    # softplus(u2) - softplus(u1) = log1p(sigmoid(u1) * expm1(u2 - u1)), u = log B - A
    cls = math.log1p(float(expit(math.log(cfg.B) - A1)) * math.expm1(d_logit))
    return cls + reg


def golden_section(f, lo, hi, tol=1e-8, max_iter=500, diff=None):
    """Minimize a unimodal ``f`` on [lo, hi]; returns (x, f(x), iterations).

    ``diff(x1, x2)``, when given, must return f(x2) - f(x1) and replaces the
    comparison of separately rounded function values.
    """
    if diff is None:
        diff = lambda u, v: f(v) - f(u)  # noqa: E731
    x1 = hi - INV_PHI * (hi - lo)
    x2 = lo + INV_PHI * (hi - lo)
    it = 0
    while hi - lo > tol and it < max_iter:
        if diff(x1, x2) >= 0:
            hi, x2 = x2, x1
            x1 = hi - INV_PHI * (hi - lo)
        else:
            lo, x1 = x1, x2
            x2 = lo + INV_PHI * (hi - lo)
        it += 1
    x = 0.5 * (lo + hi)
    return x, f(x), it


def _sign_scan(cfg, points):
    p = cfg.params
    grid = np.linspace(p.l_a, p.u_a, points)
    d = scalar_loss_deriv(grid, cfg)
    sg = np.sign(d)
    sg = sg[sg != 0]
    changes = np.flatnonzero(np.diff(sg) != 0)
    return grid, d, changes


def optimal_magnitude(cfg, tol=1e-8, scan_points=1025):
    """Minimizer of the 1-D loss on [l_a, u_a] by golden-section search.

    Raises:
      ConfigurationError: the parameters are outside the guaranteed regime.
      PropertyViolation: the derivative changes sign more than once on a
        ``scan_points`` grid (the function is not convex there).
    """
    p = cfg.params
    if not p.guarantees_hold:
        raise ConfigurationError("optimal_magnitude requires params.guarantees_hold")
    grid, d, changes = _sign_scan(cfg, scan_points)
    if len(changes) > 1 or (len(changes) == 1 and d[0] > 0):
        idx = [int(i) for i in np.flatnonzero(np.diff(np.sign(d)) != 0)]
        witnesses = [(float(grid[i]), float(d[i])) for i in idx]
        raise PropertyViolation("derivative sign pattern is not (-, +)", witnesses)

    x, _, it = golden_section(
        lambda t: scalar_loss(t, cfg), p.l_a, p.u_a, tol=tol,
        diff=lambda u, v: scalar_loss_difference(u, v, cfg),
    )
    x = min(max(x, p.l_a), p.u_a)
    return OptimumReport(
        a_star=x,
        loss_at_star=scalar_loss(x, cfg),
        deriv_at_la=scalar_loss_deriv(p.l_a, cfg),
        deriv_at_ua=scalar_loss_deriv(p.u_a, cfg),
        iterations=it,
    )


def grid_argmin(cfg, points=100_000):
    """Brute-force argmin of the 1-D loss over a uniform grid."""
    p = cfg.params
    grid = np.linspace(p.l_a, p.u_a, points)
    return float(grid[np.argmin(scalar_loss(grid, cfg))])


def bisect_magnitude(cfg, tol=1e-10, max_iter=200):
    """Root of dL/da by bisection; cross-check for :func:`optimal_magnitude`."""
    p = cfg.params
    lo, hi = p.l_a, p.u_a
    if scalar_loss_deriv(lo, cfg) >= 0:
        return lo
    if scalar_loss_deriv(hi, cfg) <= 0:
        return hi
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if scalar_loss_deriv(mid, cfg) > 0:
            hi = mid
        else:
            lo = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def convexity_certificate(cfg, grid_points=1024, threshold=1e-12):
    """Check that second differences of L on a uniform grid are all positive.

    ``worst`` is the smallest (L(a+h) - 2 L(a) + L(a-h)) / h**2. A failing
    certificate is a result, not an exception.
    """
    if grid_points < 64:
        raise ConfigurationError("grid_points must be at least 64")
    p = cfg.params
    grid = np.linspace(p.l_a, p.u_a, grid_points)
    h = grid[1] - grid[0]
    L = scalar_loss(grid, cfg)
    second = (L[2:] - 2.0 * L[1:-1] + L[:-2]) / h**2
    worst = float(np.min(second))
    return CertificateResult(passed=worst > threshold, worst=worst)


def _check_ascending(values, what):
    v = list(values)
    if any(b < a for a, b in zip(v, v[1:])):
        raise DomainError(f"{what} must be ascending")
    return v


def _monotone(a_stars, tol):
    steps = [a - b for a, b in zip(a_stars, a_stars[1:])]
    worst = min(steps) if steps else 0.0
    return MonotonicityResult(passed=worst >= -tol, a_stars=a_stars, worst_step=worst)


def monotonic_in_theta(cfg_base, thetas, tol=1e-6):
    """a*(theta) must not increase as the angle to the own center grows."""
    thetas = _check_ascending(thetas, "thetas")
    hi = math.pi / 2 - cfg_base.params.u_m
    if any(t < 0 or t > hi for t in thetas):
        raise DomainError(f"thetas must lie in [0, {hi:.6g}]")
    a_stars = [optimal_magnitude(cfg_base.with_(theta_y=t)).a_star for t in thetas]
    return _monotone(a_stars, tol)


def monotonic_in_B(cfg_base, Bs, tol=1e-6):
    """a*(B) must not increase as the competitor mass grows."""
    Bs = _check_ascending(Bs, "Bs")
    if any(not b > 0 for b in Bs):
        raise DomainError("all B values must be positive")
    a_stars = [optimal_magnitude(cfg_base.with_(B=b)).a_star for b in Bs]
    return _monotone(a_stars, tol)


def lemma1_probability(n, k, m_val):
    """P(at least k of n uniform angles satisfy theta + m <= pi/2).

    With p = (pi/2 - m)/pi this is a binomial upper tail. It is evaluated in
    log space, summing whichever side of k is the smaller probability so the
    result keeps full relative precision in both tails.
    """
    if not (isinstance(n, (int, np.integer)) and isinstance(k, (int, np.integer))):
        raise DomainError("n and k must be integers")
    if not 1 <= k <= n:
        raise DomainError(f"need 1 <= k <= n, got k={k}, n={n}")
    if not 0.0 <= m_val <= math.pi / 2:
        raise DomainError(f"m_val must lie in [0, pi/2], got {m_val}")
    p = (math.pi / 2 - m_val) / math.pi
    if p == 0.0:
        return 0.0

    def log_terms(i):
        return (gammaln(n + 1) - gammaln(i + 1) - gammaln(n - i + 1)
                + i * math.log(p) + (n - i) * math.log1p(-p))

    if k - 1 >= n * p:
        return float(min(1.0, math.exp(logsumexp(log_terms(np.arange(k, n + 1, dtype=float))))))
    log_head = logsumexp(log_terms(np.arange(k, dtype=float)))
    return float(-math.expm1(min(log_head, 0.0)))


# --- seeded suites -----------------------------------------------------------

def random_configs(count, seed, params=None, variant="magface", log_b_range=(-3.0, 12.0)):
    """Seeded configurations inside the guaranteed regime.

    Angles are uniform on [0, pi/2 - u_m]; B is log-uniform over
    ``exp(log_b_range)``.
    """
    params = params or MagParams()
    rng = np.random.default_rng(seed)
    hi = max(0.0, math.pi / 2 - params.u_m)
    thetas = rng.uniform(0.0, hi, size=count)
    Bs = np.exp(rng.uniform(*log_b_range, size=count))
    return [ScalarLossConfig(float(t), float(b), params, variant) for t, b in zip(thetas, Bs)]


def _witness(cfg, **extra):
    d = {"theta_y": cfg.theta_y, "B": cfg.B, "variant": cfg.variant, **cfg.params.to_dict()}
    d.update(extra)
    return d


def _report(prop, variant, cfgs, failures, worst):
    return {
        "property": prop,
        "variant": variant,
        "configs_tested": len(cfgs),
        "failures": failures,
        "worst_margin": worst,
    }


def convexity_suite(cfgs, grid_points=1024):
    failures, worst = [], math.inf
    for cfg in cfgs:
        r = convexity_certificate(cfg, grid_points)
        worst = min(worst, r.worst)
        if not r.passed:
            failures.append(_witness(cfg, worst_second_difference=r.worst))
    return _report("convexity", cfgs[0].variant if cfgs else None, cfgs, failures, worst)


def optimum_suite(cfgs, grid_points=100_000):
    """Endpoint derivative signs and golden-section vs. grid agreement."""
    failures, worst = [], math.inf
    for cfg in cfgs:
        p = cfg.params
        tol = 2.0 * (p.u_a - p.l_a) / grid_points
        try:
            rep = optimal_magnitude(cfg)
        except PropertyViolation as exc:
            failures.append(_witness(cfg, error=str(exc), witnesses=exc.witnesses))
            continue
        dev = abs(rep.a_star - grid_argmin(cfg, grid_points))
        margin = min(-rep.deriv_at_la, rep.deriv_at_ua, tol - dev)
        worst = min(worst, margin)
        if not (rep.deriv_at_la < 0 and rep.deriv_at_ua > 0 and dev <= tol):
            failures.append(_witness(cfg, deriv_at_la=rep.deriv_at_la,
                                     deriv_at_ua=rep.deriv_at_ua, grid_deviation=dev))
    return _report("unique_optimum", cfgs[0].variant if cfgs else None, cfgs, failures, worst)


def monotonicity_suite(params, variant, thetas=(0.1, 0.3, 0.5, 0.7), Bs=(1.0, 10.0, 100.0, 1000.0),
                       theta_fixed=0.5, B_fixed=100.0, tol=1e-6):
    base = ScalarLossConfig(theta_fixed, B_fixed, params, variant)
    failures = []
    rt = monotonic_in_theta(base, thetas, tol)
    rb = monotonic_in_B(base, Bs, tol)
    if not rt.passed:
        failures.append(_witness(base, sweep="theta", values=list(thetas), a_stars=rt.a_stars))
    if not rb.passed:
        failures.append(_witness(base, sweep="B", values=list(Bs), a_stars=rb.a_stars))
    rep = _report("monotonicity", variant, [base, base], failures, min(rt.worst_step, rb.worst_step))
    rep["a_star_theta"] = rt.a_stars
    rep["a_star_B"] = rb.a_stars
    return rep


def cap_probability_suite():
    cases = [(85000, 1, 0.5, 1.0 - 1e-10, None), (2, 1, 0.0, None, 0.75)]
    failures, worst = [], math.inf
    for n, k, m, lower, exact in cases:
        val = lemma1_probability(n, k, m)
        if lower is not None:
            margin = val - lower
        else:
            margin = 1e-15 - abs(val - exact)
        worst = min(worst, margin)
        if margin < 0:
            failures.append({"n": n, "k": k, "m_val": m, "probability": val})
    return {"property": "cap_probability", "variant": None, "configs_tested": len(cases),
            "failures": failures, "worst_margin": worst}
