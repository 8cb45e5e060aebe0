"""Removing the stable-fiber dependence of a roof.

On the two-sided model a roof phi(ybar, z) depends on the stable
coordinate z.  chi sums the differences along forward orbits, and
tilde_phi = phi + chi - chi o F no longer sees z.  The conjugacy pair
g+ / g- between the two suspension flows round-trips to rounding error.

    python3 demos/coboundary.py
"""
import numpy as np

from nuhflows.suspension import (SuspensionFlow, TwoSidedModel, chi, conjugacies, fiber_roof, flow_eval,
                                 tilde_phi)

model = TwoSidedModel(power=4)
roof = fiber_roof(1.0, 0.1, 0.25)
rng = np.random.default_rng(0)

ybar = rng.random(5)
for y in ybar:
    z = np.linspace(-0.5, 0.5, 6)
    yy = np.full_like(z, y)
    raw = model.phi(roof, yy, z)
    red = tilde_phi(model, roof, yy, z)
    print(f"ybar = {y:.3f}:  phi spread {np.ptp(raw):.3e}   tilde_phi spread {np.ptp(red):.3e}")

y, z = model.sample(10_000, rng)
c = chi(model, roof, y, z)
print(f"\nsup |chi| on 1e4 points: {np.max(np.abs(c)):.4f}")

conj = conjugacies(model, roof)
print(f"conjugacy shift {conj.shift:.4f}, sup|chi| {conj.chi_sup:.4f}")
u = rng.random(y.size) * model.phi(roof, y, z)
back = conj.g_minus(*conj.g_plus(y, z, u))
# g- o g+ is the time-2|chi| map of the phi suspension
susp = SuspensionFlow(model, roof)
ref, _ = flow_eval(susp, {"y": y, "z": z, "u": u}, conj.shift)
print("round trip vs flow, max error:", max(np.max(np.abs(a - ref[k])) for a, k in zip(back, "yzu")))
