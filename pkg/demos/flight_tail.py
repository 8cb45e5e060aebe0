"""Free-flight tail of the single-disk Lorentz gas.

With an open corridor the flight time X between collisions has
mu(X > t) ~ C t^-2.  This draws a few million flights from stationary
chains and fits the log-log slope.

    python3 demos/flight_tail.py [n_collisions]
"""
import sys

import numpy as np

from nuhflows.billiard import free_flights, infinite_horizon, table_from_config
from nuhflows.stats import tail_survival

n = int(sys.argv[1]) if len(sys.argv) > 1 else 2_000_000
table = table_from_config({"variant": "lorentz-torus", "scatterers": [[0.0, 0.0, 0.25]]})
print("infinite horizon:", infinite_horizon(table))

x, info = free_flights(table, n, seed=1, n_chains=100)
print(f"{x.size} flights, mean {x.mean():.4f}, longest {x.max():.1f}")

est = tail_survival(x, np.geomspace(1, 200, 40), window=(5, 100), seed=2)
print(f"slope on [5, 100]: {est.slope:.3f}  (95% CI {est.ci[0]:.3f} .. {est.ci[1]:.3f})")
for t, s in zip(est.t[::6], est.survival[::6]):
    print(f"  t = {t:8.2f}   mu(X > t) = {s:.3e}   t^2 mu = {t * t * s:.4f}")
