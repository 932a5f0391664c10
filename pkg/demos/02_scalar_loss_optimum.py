"""The one-dimensional loss in the magnitude: convexity, optimum and its trends.

Run with ``python3 demos/02_scalar_loss_optimum.py``.
"""

# %% One configuration in detail
from magface_lab.magparams import MagParams
from magface_lab.theory import (
    ScalarLossConfig,
    convexity_certificate,
    grid_argmin,
    lemma1_probability,
    optimal_magnitude,
)

p = MagParams()
cfg = ScalarLossConfig(theta_y=0.5, B=100.0, params=p)
rep = optimal_magnitude(cfg)
print(f"a* = {rep.a_star:.6f} after {rep.iterations} golden-section steps")
print(f"grid argmin (1e5 points) = {grid_argmin(cfg):.6f}")
print(f"derivative at l_a {rep.deriv_at_la:+.4f}, at u_a {rep.deriv_at_ua:+.4f}")
print(f"convex on the grid: {convexity_certificate(cfg).passed}")

# %% Harder samples (larger angle) settle at smaller magnitudes
for variant in ("magface", "magcosface"):
    stars = [optimal_magnitude(cfg.with_(theta_y=t, variant=variant)).a_star for t in (0.1, 0.3, 0.5, 0.7)]
    print(variant, "a*(theta) =", [round(a, 2) for a in stars])

# %% More competition from other classes also lowers the optimum
stars = [optimal_magnitude(cfg.with_(B=b)).a_star for b in (1.0, 10.0, 100.0, 1000.0)]
print("a*(B) =", [round(a, 2) for a in stars])

# %% Probability that k of n random class centers fall inside a margin cap
for n in (2, 10, 1000, 85000):
    print(f"n={n:6d}  P(k=1, m=0.5) = {lemma1_probability(n, 1, 0.5):.12f}")
print("n=2, k=1, m=0 gives", lemma1_probability(2, 1, 0.0), "and 1 - (1/2)^2 =", 1 - 0.5**2)
