"""Leading eigenvalue of the twisted transfer operator R(ib).

Doubling map with roof 1 + x/2.  lambda(0) = 1, lambda'(0) = -int phi
= -1.25, and |lambda(ib)| dips below one away from b = 0 as the roof
is not cohomologous to a constant.

    python3 demos/twisted_spectrum.py
"""
import numpy as np

from nuhflows.gibbs_markov import affine_roof, lambda_prime, leading_eigenvalue, make_builtin

gm = make_builtin("doubling")
roof = affine_roof(1.0, 0.5)

print("lambda(0)  =", leading_eigenvalue(gm, roof, 0.0).lam)
print("lambda'(0) =", lambda_prime(gm, roof), " expected -1.25")

print("\n     b      |lambda(ib)|")
for b in np.linspace(-0.18, 0.18, 7):
    lam = leading_eigenvalue(gm, roof, 1j * b).lam
    print(f"{b:8.3f}   {abs(lam):.10f}")
