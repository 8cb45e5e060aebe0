"""Polynomial correlation decay for the flow over the LSV map.

alpha = 1/2 gives return-time tails ~ n^-2 on the induced base, and the
correlation of a smooth observable decays like t^-1.  The default budget
here is small, so expect a wider interval than the full preset
(nuhflows correlate --preset beta2-decay).

    python3 demos/lsv_decay.py [budget]
"""
import os
import sys

import numpy as np

from nuhflows.stats import correlation, decay_exponent_fit
from nuhflows.suspension import LSVFlow, bump_observable

budget = int(float(sys.argv[1])) if len(sys.argv) > 1 else 1_000_000
flow = LSVFlow(0.5)
v = bump_observable(flow.r0, flow.r1)
t = np.geomspace(1, 300, 30)

series = correlation(flow, v, v, t, budget, seed=3, threads=os.cpu_count() or 1)
for ti, r, s in zip(series.t, series.rho, series.se):
    print(f"t = {ti:7.2f}   rho = {r: .4e} +- {s:.1e}")
b, ci, _ = decay_exponent_fit(series, window=(10, 200))
print(f"\ndecay exponent on [10, 200]: {b:.3f}  (CI {ci[0]:.3f} .. {ci[1]:.3f}), expected -1")
