"""Margin schedule, magnitude regularizer and the lower bound on lambda_g.

Run with ``python3 demos/01_margin_and_bound.py``.
"""

# %% The default parameter set
import numpy as np

from magface_lab.magparams import (
    MagParams,
    ablation_params,
    lambda_lower_bound,
    margin,
    regularizer,
)

p = MagParams()
print(p.to_json())
print(f"slope K = {p.K:.6f}")

# %% Margin grows linearly with magnitude; the regularizer bottoms out at u_a
for a in np.linspace(p.l_a, p.u_a, 6):
    print(f"a={a:6.1f}  m(a)={float(margin(a, p)):.3f}  g(a)={float(regularizer(a, p)):.5f}")

# %% How strong the regularizer must be, and whether each margin row clears it
print(f"\nlower bound on lambda_g: {lambda_lower_bound(p):.4f} (configured {p.lambda_g})")
for row in ablation_params():
    bound = lambda_lower_bound(row)
    verdict = "holds" if row.guarantees_hold else "does not hold"
    print(f"l_m={row.l_m:.2f} u_m={row.u_m:.2f}  bound={bound:7.3f}  guarantee {verdict}")
