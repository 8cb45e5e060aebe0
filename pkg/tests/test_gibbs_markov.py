import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nuhflows.errors import BadParams, EmptySubsystem
from nuhflows.gibbs_markov import (
    Roof, affine_roof, approx_eigenfunction_defect, build_transfer, constant_roof, defect_horizon,
    invariant_density, lambda_prime, leading_eigenvalue, make_builtin, separation_time, twisted_iterate,
)
from nuhflows.stats import tail_survival

DOUBLING = make_builtin("doubling")
GAUSS = make_builtin("gauss")
LSV = make_builtin("lsv_induced", {"alpha": 0.5})
INDUCED = Roof(None, "induced", induced=True)


def _roof_for(gm):
    return INDUCED if gm.name == "lsv_induced" else affine_roof(1.0, 0.5)


# ------------------------------------------------------------------ builtins
def test_doubling_builtin():
    """[TRIVIAL] two branches, potential log(1/2), density 1."""
    assert DOUBLING.branch_labels() == (0, 1)
    y = np.linspace(0.01, 0.99, 37)
    assert np.allclose(DOUBLING.potential(y), math.log(0.5), atol=1e-15)
    assert np.all(DOUBLING.density(y) == 1.0)


def test_gauss_branches_and_density():
    """[DERIVED] Gauss branches are (1/(j+1), 1/j]; the s = 0 fixed point of the
    Lebesgue transfer operator reproduces 1/((1+x) ln 2)."""
    for j in (1, 2, 7, 50):
        lo, hi = GAUSS.branch_interval(j)
        assert lo == pytest.approx(1 / (j + 1)) and hi == pytest.approx(1 / j)
        assert GAUSS.branch_of(np.array([hi]))[0] == j
        assert GAUSS.branch_of(np.array([0.5 * (lo + hi)]))[0] == j
    x, v = invariant_density(GAUSS, resolution=64, return_nodes=True)
    assert np.max(np.abs(v - 1 / ((1 + x) * math.log(2)))) < 1e-8


def test_lsv_induced_roof_tail():
    """[DERIVED] direct sampling of the induced return time: survival slope -2 +- 0.2."""
    y = LSV.sample(1_000_000, np.random.default_rng(1))
    r = INDUCED(LSV, y)
    est = tail_survival(r, np.geomspace(2, 5000, 60), window=(20, 1000), n_boot=50)
    assert abs(est.slope + 2) < 0.2


def test_bad_params():
    """[TRIVIAL] invalid builtin names and parameters are rejected."""
    with pytest.raises(BadParams):
        make_builtin("tent")
    with pytest.raises(BadParams):
        make_builtin("lsv_induced", {"alpha": 1.5})
    with pytest.raises(BadParams):
        make_builtin("doubling", {"alpha": 0.5})


# ---------------------------------------------------------- separation time
def test_separation_identical_saturates():
    """[TRIVIAL] y = y' never separates."""
    s = separation_time(DOUBLING, 0.3, 0.3, n_cap=40)
    assert s == 40 and s.saturated


@given(st.integers(0, 40), st.integers(0, 2**41 - 1))
@settings(max_examples=60, deadline=None)
def test_separation_binary_digit(k, bits):
    """[TRIVIAL] first differing binary digit at 0-based position k gives s = k."""
    y = bits / 2.0**42
    digit = int(y * 2 ** (k + 1)) % 2
    y2 = y + (2.0 ** -(k + 1) if digit == 0 else -(2.0 ** -(k + 1)))
    s = separation_time(DOUBLING, y, y2, n_cap=60)
    assert s == k and not s.saturated


@pytest.mark.parametrize("gm", [DOUBLING, GAUSS], ids=["doubling", "gauss"])
def test_separation_distance_scaling(gm):
    """[DERIVED] d(F^n y, F^n y') <= C theta^(s - n): per-pair regressions of
    log d on s - n have slope at most log theta, and the fitted C is bounded."""
    rng = np.random.default_rng(3)
    slopes, consts = [], []
    for _ in range(300):
        y = rng.uniform(0.05, 0.95)
        y2 = y + rng.uniform(-1, 1) * 10.0 ** rng.uniform(-9, -4)
        s = separation_time(gm, y, y2, n_cap=60)
        if s < 4:
            continue
        a, b = np.array([y]), np.array([y2])
        xs, ys = [], []
        for n in range(int(s) + 1):
            xs.append(s - n)
            ys.append(math.log(abs(a[0] - b[0])))
            a, b = gm.forward(a)[0], gm.forward(b)[0]
        slopes.append(np.polyfit(xs, ys, 1)[0])
        consts.append(max(np.array(ys) - np.array(xs) * math.log(gm.theta)))
    slopes = np.array(slopes)
    assert len(slopes) > 100
    assert np.median(slopes) <= math.log(gm.theta)
    assert max(consts) < math.log(10.0)
    if gm.name == "doubling":
        assert np.allclose(slopes, math.log(0.5), atol=1e-3)


# -------------------------------------------------------- transfer operator
def test_transfer_preserves_constants():
    """[TRIVIAL] R1 = 1 at s = 0 for the doubling map."""
    T = build_transfer(DOUBLING, None, 0.0, 64)
    assert np.max(np.abs(T.matrix @ np.ones(65) - 1)) < 1e-12


@pytest.mark.parametrize("gm", [DOUBLING, GAUSS, LSV], ids=["doubling", "gauss", "lsv"])
def test_transfer_preserves_integrals(gm):
    """[TRIVIAL] int R(0) v dmu = int v dmu on random polynomials."""
    T = build_transfer(gm, None, 0.0, 64)
    rng = np.random.default_rng(0)
    x = (T.nodes - gm.lo) / (gm.hi - gm.lo)
    tol = 1e-10 if gm.name != "gauss" else 1e-8
    for _ in range(10):
        v = np.polynomial.polynomial.polyval(x, rng.normal(size=6))
        assert abs(T.integrate(T.matrix @ v) - T.integrate(v)) < tol


def test_transfer_duality():
    """[TRIVIAL] int (R v) w dmu = int v (w o F) dmu (pointwise oracle for w o F)."""
    T = build_transfer(DOUBLING, None, 0.0, 64)
    rng = np.random.default_rng(5)
    cv, cw = rng.normal(size=5), rng.normal(size=5)
    lhs = T.integrate((T.matrix @ np.polynomial.polynomial.polyval(T.nodes, cv))
                      * np.polynomial.polynomial.polyval(T.nodes, cw))
    # right side on a fine midpoint grid; w o F is only piecewise smooth
    y = (np.arange(200_000) + 0.5) / 200_000
    rhs = np.mean(np.polynomial.polynomial.polyval(y, cv)
                  * np.polynomial.polynomial.polyval(DOUBLING.forward(y)[0], cw))
    assert lhs.real == pytest.approx(rhs, abs=1e-8)


@pytest.mark.parametrize("gm", [DOUBLING, GAUSS, LSV], ids=["doubling", "gauss", "lsv"])
@pytest.mark.parametrize("a", [0.1, 0.5, 2.0])
def test_transfer_sup_bound(gm, a):
    """[DERIVED] |R(a) 1|_inf <= exp(-a inf phi)."""
    roof = _roof_for(gm)
    T = build_transfer(gm, roof, a, 64)
    assert np.max(np.abs(T.matrix @ np.ones(65))) <= math.exp(-a * roof.inf(gm)) * (1 + 1e-9)


def test_transfer_rejects_left_half_plane():
    """[TRIVIAL] Re s < 0 is outside the domain."""
    with pytest.raises(BadParams):
        build_transfer(DOUBLING, affine_roof(1, 0), -0.1)


# -------------------------------------------------------------- eigenvalues
@pytest.mark.parametrize("gm", [DOUBLING, GAUSS, LSV], ids=["doubling", "gauss", "lsv"])
def test_lambda_zero_is_one(gm):
    """[PAPER] lambda(0) = 1."""
    assert abs(leading_eigenvalue(gm, _roof_for(gm), 0.0).lam - 1) < 1e-8


@pytest.mark.parametrize("gm", [DOUBLING, GAUSS], ids=["doubling", "gauss"])
def test_lambda_prime_is_minus_mean(gm):
    """[PAPER] lambda'(0) = -int phi dmu (central differences, quadrature oracle)."""
    roof = _roof_for(gm)
    assert abs(lambda_prime(gm, roof).real + roof.integral(gm)) < 1e-3


def test_lambda_prime_lsv_induced():
    """[PAPER] lambda'(0) = -int phi for the induced LSV roof; the truncated
    branch tail leaves a bias of a few 1e-3 relative to the Kac mean."""
    lp = lambda_prime(LSV, INDUCED).real
    mean = INDUCED.integral(LSV)
    assert abs(lp + mean) < 5e-3
    assert abs(lp + mean) / mean < 1e-3


@pytest.mark.parametrize("gm", [DOUBLING, GAUSS, LSV], ids=["doubling", "gauss", "lsv"])
def test_lambda_on_imaginary_axis(gm):
    """[PAPER] |lambda(ib)| <= 1 on 50 points of (-delta, delta)."""
    roof = _roof_for(gm)
    for b in np.linspace(-0.19, 0.19, 50):
        assert abs(leading_eigenvalue(gm, roof, 1j * b).lam) <= 1 + 1e-8


def test_lambda_outside_window():
    """[TRIVIAL] |s| >= delta_spec is rejected."""
    with pytest.raises(BadParams):
        leading_eigenvalue(DOUBLING, affine_roof(1, 0.5), 0.5)


def test_lambda_grid_convergence():
    """[DERIVED] |lambda(0) - 1| does not grow as the resolution doubles (Gauss)."""
    errs = [abs(leading_eigenvalue(GAUSS, affine_roof(1, 0.5), 0.0, resolution=n).lam - 1)
            for n in (16, 32, 64)]
    assert errs[1] <= max(errs[0] / 2, 1e-8) and errs[2] <= max(errs[1] / 2, 1e-8)


# -------------------------------------------------------- twisted iterate
def test_twisted_b_zero_is_composition():
    """[TRIVIAL] M_0 v = v o F."""
    x = np.linspace(0, 0.999, 101)
    v = lambda y: np.cos(3 * y) + 0j
    out = twisted_iterate(DOUBLING, affine_roof(1, 1), 0.0, v, x)
    assert np.allclose(out, np.cos(3 * ((2 * x) % 1)), atol=1e-15)


@given(st.floats(-50, 50))
@settings(max_examples=40, deadline=None)
def test_twisted_preserves_sup_norm(b):
    """[TRIVIAL] the twist factor is unimodular and F is onto."""
    x = np.linspace(0, 1, 2001)[:-1]
    v = lambda y: np.exp(2j * y) * (1 + y)
    out = twisted_iterate(DOUBLING, affine_roof(1, 1), b, v, x)
    assert np.max(np.abs(out)) == pytest.approx(np.max(np.abs(v(x))), rel=1e-3)
    assert np.allclose(np.abs(out), np.abs(v(DOUBLING.forward(x)[0])), atol=1e-14)


def test_twisted_constant_roof_resonance():
    """[TRIVIAL] phi = 1, b = 2 pi, v = 1 gives exactly 1."""
    x = np.linspace(0, 1, 257)[:-1]
    out = twisted_iterate(DOUBLING, constant_roof(1.0), 2 * math.pi, lambda y: np.ones_like(y), x)
    assert np.all(out == 1.0)


# -------------------------------------------------------------------- defect
@pytest.mark.parametrize("k", [1, 2, 5, 11])
def test_defect_constant_roof_resonance(k):
    """[TRIVIAL] constant roof, b = 2 pi k: exact eigenfunction u = 1 with psi = 0."""
    r = approx_eigenfunction_defect(DOUBLING, constant_roof(1.0), [0, 1], 2 * math.pi * k, 1.0)
    assert r.defect == 0.0 and r.psi == 0.0


def test_defect_curve_in_xi():
    """[DERIVED] doubling with roof 1 + x: a finite defect curve in xi, horizon
    floor(xi ln|b|), values within [0, 2]."""
    b = 40.0
    prev_n = 0
    for xi in (0.25, 0.5, 1.0, 2.0, 4.0):
        r = approx_eigenfunction_defect(DOUBLING, affine_roof(1, 1), [0, 1], b, xi, n_samples=500)
        n = defect_horizon(b, xi)
        assert n >= prev_n and n == max(1, math.floor(xi * math.log(b)))
        assert 0.0 <= r.defect <= 2.0 + 1e-12
        prev_n = n


@given(st.floats(0, 2 * math.pi))
@settings(max_examples=20, deadline=None)
def test_defect_phase_gauge(theta):
    """[TRIVIAL] the defect is invariant under u -> e^{i theta} u."""
    u = lambda y: np.exp(1j * np.sin(5 * y))
    ut = lambda y: np.exp(1j * theta) * u(y)
    r1 = approx_eigenfunction_defect(DOUBLING, affine_roof(1, 1), [0, 1], 30.0, 1.0, n_samples=300, u=u)
    r2 = approx_eigenfunction_defect(DOUBLING, affine_roof(1, 1), [0, 1], 30.0, 1.0, n_samples=300, u=ut)
    assert r1.defect == pytest.approx(r2.defect, abs=1e-12)


def test_defect_errors():
    """[TRIVIAL] empty or foreign Z0 raises EmptySubsystem."""
    with pytest.raises(EmptySubsystem):
        approx_eigenfunction_defect(DOUBLING, affine_roof(1, 1), [], 10.0, 1.0)
    with pytest.raises(EmptySubsystem):
        approx_eigenfunction_defect(DOUBLING, affine_roof(1, 1), [3], 10.0, 1.0)
