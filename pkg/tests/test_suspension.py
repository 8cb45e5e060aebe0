import decimal
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from nuhflows.billiard import BilliardTable
from nuhflows.errors import (
    BadParams, DegenerateRange, FitDiverged, InducePowerNeeded, NoConvergence, PrecisionExhausted,
)
from nuhflows.gibbs_markov import Roof, affine_roof, constant_roof, make_builtin
from nuhflows.suspension import (
    BilliardSection, LSVFlow, SuspensionFlow, TwoSidedModel, branch_mass, chi, chi_sup, conjugacies,
    diophantine_ratio, fiber_roof, flow_eval, good_asymptotics_fit, holder_diagnostics, lift_observable,
    periodic_orbits, periodic_point, roof_tail_inequality, tdf_range_dimension, temporal_distance,
    tilde_phi, truncate_roof,
)
from nuhflows.suspension.models import _reduce

M1 = TwoSidedModel()
M4 = TwoSidedModel(power=4)
FIBER = fiber_roof(1.0, 0.0, 0.25)        # 1 + z/4
GENERIC = fiber_roof(1.0, 0.1, 0.25)      # 1 + 0.1 sin(2 pi ybar) + z/4
SKEW = fiber_roof(1.0, 0.2, 0.0)          # no stable dependence
DOUBLING = make_builtin("doubling")
LSV = make_builtin("lsv_induced", {"alpha": 0.5})
INDUCED = Roof(None, "induced", induced=True)


def _brute_chi(model, roof, y, z, K):
    a, b = (y, np.zeros_like(z)), (y, z)
    s = np.zeros_like(z)
    for _ in range(K):
        s = s + model.phi(roof, *a) - model.phi(roof, *b)
        a, b = model.F(*a), model.F(*b)
    return s


# ----------------------------------------------------------------------- chi
def test_chi_skew_product_is_zero():
    """[PAPER] a roof constant on stable fibers has chi = 0."""
    y, z = M1.sample(1000, np.random.default_rng(0))
    assert np.all(chi(M1, SKEW, y, z) == 0.0)


def test_chi_on_unstable_leaf_is_zero():
    """[TRIVIAL] pi fixes the reference leaf z = 0."""
    y, _ = M1.sample(1000, np.random.default_rng(1))
    assert np.all(chi(M1, GENERIC, y, np.zeros_like(y)) == 0.0)


def test_chi_matches_brute_force():
    """[DERIVED] roof 1 + z/4 against a K = 200 direct sum (closed form -z/2)."""
    y, z = M1.sample(2000, np.random.default_rng(2))
    c = chi(M1, FIBER, y, z, tol=1e-13)
    b = _brute_chi(M1, FIBER, y, z, 200)
    assert np.max(np.abs(c - b)) < 1e-10
    assert np.max(np.abs(c + z / 2)) < 1e-10


def test_chi_remainder_bound():
    """[DERIVED] the reported bound dominates the true truncation error; too
    small a K raises NoConvergence."""
    y, z = M1.sample(200, np.random.default_rng(3))
    c, bound = chi(M1, GENERIC, y, z, K=10, tol=1.0, return_bound=True)
    exact = _brute_chi(M1, GENERIC, y, z, 200)
    assert np.max(np.abs(c - exact)) <= bound
    with pytest.raises(NoConvergence):
        chi(M1, GENERIC, y, z, K=5, tol=1e-9)


# ----------------------------------------------------------------- tilde phi
def test_tilde_phi_skew_product():
    """[TRIVIAL] chi = 0 gives tilde phi = phi."""
    y, z = M1.sample(500, np.random.default_rng(4))
    assert np.array_equal(tilde_phi(M1, SKEW, y, z), M1.phi(SKEW, y, z))


def test_tilde_phi_constant_on_fibers():
    """[PAPER] tilde phi is constant along stable fibers; variance < 1e-18."""
    rng = np.random.default_rng(5)
    ybar, _ = M1.sample(50, rng)
    for yb in ybar:
        z = rng.random(64)
        tp = tilde_phi(M1, GENERIC, np.full(64, yb), z, tol=1e-13)
        assert np.ptp(tp) < 1e-9
        assert np.var(tp) < 1e-18


def test_tilde_phi_same_mean():
    """[PAPER] int tilde phi = int phi (paired Monte Carlo, 3 sigma)."""
    y, z = M1.sample(200_000, np.random.default_rng(6))
    d = tilde_phi(M1, GENERIC, y, z) - M1.phi(GENERIC, y, z)
    assert abs(d.mean()) < 3 * d.std(ddof=1) / math.sqrt(d.size)


def test_chi_cocycle_consistency():
    """[DERIVED] chi(y) - chi(Fy) = tilde phi(y) - phi(y) to 1e-10."""
    y, z = M1.sample(2000, np.random.default_rng(7))
    fy, fz = M1.F(y, z)
    lhs = chi(M1, GENERIC, y, z, tol=1e-13) - chi(M1, GENERIC, fy, fz, tol=1e-13)
    rhs = tilde_phi(M1, GENERIC, y, z, tol=1e-13) - M1.phi(GENERIC, y, z)
    assert np.max(np.abs(lhs - rhs)) < 1e-10


@pytest.mark.parametrize("word", [(0,), (1,), (0, 1), (0, 0, 1), (1, 1, 0, 1), (0, 1, 1, 0, 1, 0)])
def test_period_identity(word):
    """[PAPER] Birkhoff sums of tilde phi and phi agree on periodic orbits."""
    y, z = M1.periodic_point(word)
    y, z = np.array([y]), np.array([z])
    s1 = s2 = 0.0
    for _ in range(len(word)):
        s1 += tilde_phi(M1, GENERIC, y, z, tol=1e-13)[0]
        s2 += M1.phi(GENERIC, y, z)[0]
        y, z = M1.F(y, z)
    assert abs(s1 - s2) < 1e-9


# ---------------------------------------------------------------- conjugacies
def test_conjugacy_identity_when_chi_zero():
    """[TRIVIAL] chi = 0 makes g+ and g- the identity."""
    roof = fiber_roof(2.0, 0.2, 0.0)
    cj = conjugacies(M1, roof)
    assert cj.chi_sup == 0.0
    y, z = M1.sample(1000, np.random.default_rng(8))
    u = np.random.default_rng(9).random(1000) * M1.phi(roof, y, z)
    for g in (cj.g_plus, cj.g_minus):
        a, b, c = g(y, z, u)
        assert np.array_equal(a, y) and np.array_equal(b, z) and np.array_equal(c, u)


def test_conjugacy_needs_power():
    """[PAPER] inf phi < 4|chi| + 1 asks for a power of the base map."""
    with pytest.raises(InducePowerNeeded):
        conjugacies(M1, FIBER)


def test_conjugacy_round_trip():
    """[PAPER] g- o g+ is the time-2|chi| map on 1e4 random points."""
    cj = conjugacies(M4, FIBER)
    susp = SuspensionFlow(M4, FIBER)
    st_ = susp.sample(10_000, np.random.default_rng(10))
    a = cj.g_minus(*cj.g_plus(st_["y"], st_["z"], st_["u"]))
    b = _reduce(M4, st_["y"], st_["z"], st_["u"] + cj.shift, lambda p, q: M4.phi(FIBER, p, q))[:3]
    err = np.max(np.abs(a[0] - b[0]) + np.abs(a[1] - b[1]) + np.abs(a[2] - b[2]))
    assert err < 1e-8


def test_conjugacy_measure_preserving():
    """[DERIVED] g+ pushes mu^phi to mu^tilde-phi (two-sample KS at 1%)."""
    cj = conjugacies(M4, FIBER)
    rng = np.random.default_rng(11)
    st_ = SuspensionFlow(M4, FIBER).sample(20_000, rng)
    gy, gz, gu = cj.g_plus(st_["y"], st_["z"], st_["u"])
    # mu^tilde-phi by rejection on the tilde roof
    y, z = M4.sample(80_000, rng)
    tp = tilde_phi(M4, FIBER, y, z)
    keep = rng.random(y.size) * tp.max() < tp
    y, z, tp = y[keep], z[keep], tp[keep]
    u = rng.random(y.size) * tp
    for a, b in ((gy, y), (gz, z), (gu, u)):
        assert stats.ks_2samp(a, b).pvalue > 0.01 / 3


# ------------------------------------------------------------------ flow eval
SUSP_D = SuspensionFlow(DOUBLING, affine_roof(1.0, 1.0))


def test_flow_eval_within_fiber():
    """[TRIVIAL] t < phi(y) - u just moves up the fiber."""
    p, steps = flow_eval(SUSP_D, {"y": 0.3, "u": 0.2}, 0.9)
    assert p == {"y": 0.3, "u": pytest.approx(1.1)} and steps == 0


def test_flow_eval_identification():
    """[TRIVIAL] t = phi(y) - u lands on (Fy, 0)."""
    p, steps = flow_eval(SUSP_D, {"y": 0.25, "u": 0.5}, 0.75)
    assert p["y"] == 0.5 and p["u"] == 0.0 and steps == 1


def test_flow_eval_negative_time():
    """[TRIVIAL] flows run forward only."""
    with pytest.raises(BadParams):
        flow_eval(SUSP_D, {"y": 0.3, "u": 0.0}, -1.0)


@given(st.integers(1, 2**52 - 1), st.floats(0, 1), st.floats(0, 20), st.floats(0, 20))
@settings(max_examples=100, deadline=None)
def test_flow_eval_cocycle(k, frac, t, s):
    """[TRIVIAL] F_s F_t = F_{t+s}."""
    y = k / 2.0**52
    u = frac * (1 + y) * (1 - 1e-12)
    a, _ = flow_eval(SUSP_D, {"y": y, "u": u}, t)
    b, _ = flow_eval(SUSP_D, a, s)
    c, _ = flow_eval(SUSP_D, {"y": y, "u": u}, t + s)
    if b["y"] == c["y"]:
        assert abs(b["u"] - c["u"]) < 1e-10
    else:
        # rounding put one of them at the top of a fiber: (y, phi(y)) ~ (Fy, 0)
        top, bot = (b, c) if b["u"] > c["u"] else (c, b)
        assert bot["u"] < 1e-10 and abs(top["u"] - (1 + top["y"])) < 1e-10


@pytest.mark.parametrize("t", [0.3, 1.7, 5.0])
def test_flow_preserves_measure(t):
    """[PAPER] mu^phi samples are statistically invariant under F_t."""
    rng = np.random.default_rng(12)
    a = SUSP_D.sample(20_000, rng)
    b = SUSP_D.sample(20_000, rng)
    SUSP_D.advance(b, t, rng)
    assert stats.ks_2samp(a["y"], b["y"]).pvalue > 0.01 / 2
    assert stats.ks_2samp(a["u"], b["u"]).pvalue > 0.01 / 2


# ----------------------------------------------------------------- truncation
def test_truncation_above_sup_is_identity():
    """[TRIVIAL] N > sup phi leaves Y(N) empty and the roof unchanged."""
    t = truncate_roof(SUSP_D, 3.0)
    assert t.info["YN"] == [] and t.info["mu_YN"] == 0.0
    y = np.linspace(0, 0.999, 200)
    assert np.array_equal(t.roof(DOUBLING, y), SUSP_D.roof(DOUBLING, y))


@pytest.fixture(scope="module")
def lsv_trunc():
    return truncate_roof(SuspensionFlow(LSV, INDUCED), 50.0)


def test_truncation_bounded_by_2C1N(lsv_trunc):
    """[PAPER] phi(N) <= 2 C1 N, so the survival vanishes beyond 2 C1 50."""
    y = LSV.sample(200_000, np.random.default_rng(13))
    v = lsv_trunc.roof(LSV, y)
    bound = 2 * lsv_trunc.info["C1"] * 50
    assert np.mean(v > bound) == 0.0
    assert lsv_trunc.info["max_phiN"] <= bound


def test_truncation_mass(lsv_trunc):
    """[DERIVED] mu(phi(N) != phi) matches the summed branch masses."""
    info = lsv_trunc.info
    direct = 1.0 - sum(branch_mass(LSV, j) for j in range(1, info["YN"][0]))
    assert info["mu_YN"] == pytest.approx(direct, rel=1e-6)
    y = LSV.sample(400_000, np.random.default_rng(14))
    p = np.mean(lsv_trunc.roof(LSV, y) != INDUCED(LSV, y))
    se = math.sqrt(p * (1 - p) / y.size)
    assert abs(p - info["mu_YN"]) < 3 * se


def test_truncation_below_N0():
    """[TRIVIAL] N must be at least N0."""
    with pytest.raises(BadParams):
        truncate_roof(SUSP_D, 0.5)


# ----------------------------------------------------------- temporal distance
def test_temporal_distance_same_stable_fiber():
    """[TRIVIAL] y4 on W^s(y1) makes the four-point sum telescope to 0."""
    rng = np.random.default_rng(15)
    y1 = (rng.random(100), rng.random(100))
    y4 = (y1[0], rng.random(100))
    D, _ = temporal_distance(M1, GENERIC, y1, y4)
    assert np.max(np.abs(D)) < 1e-12


def test_temporal_distance_diagonal():
    """[TRIVIAL] D(y1, y1) = 0."""
    rng = np.random.default_rng(16)
    y1 = (rng.random(100), rng.random(100))
    D, _ = temporal_distance(M1, GENERIC, y1, y1)
    assert np.all(D == 0.0)


def test_temporal_distance_skew_product():
    """[DERIVED] no stable dependence: forward terms cancel, the value is the
    backward sum, checked against a direct sum at depth 2K."""
    rng = np.random.default_rng(17)
    K = 30
    y1 = (rng.random(50), rng.random(50))
    y4 = (rng.random(50), rng.random(50))
    D, rem = temporal_distance(M1, SKEW, y1, y4, K=K)
    pts = [(y1[0], y1[1]), (y1[0], y4[1]), (y4[0], y1[1]), (y4[0], y4[1])]
    fw = list(pts)
    for _ in range(K):
        v = [M1.phi(SKEW, *q) for q in fw]
        assert np.max(np.abs(v[0] - v[1] - v[2] + v[3])) < 1e-15
        fw = [M1.F(*q) for q in fw]
    back = np.zeros(50)
    bw = [M1.F_inv(*q) for q in pts]
    for _ in range(1, 2 * K):
        v = [M1.phi(SKEW, *q) for q in bw]
        back += v[0] - v[1] - v[2] + v[3]
        bw = [M1.F_inv(*q) for q in bw]
    assert np.max(np.abs(D - back)) <= rem + 1e-12
    assert np.max(np.abs(back)) > 1e-3


def test_tdf_dimension_degenerate():
    """[TRIVIAL] a constant roof gives D = 0 everywhere."""
    rng = np.random.default_rng(18)
    y1 = (rng.random(1000), rng.random(1000))
    y4 = (rng.random(1000), rng.random(1000))
    D, _ = temporal_distance(M1, fiber_roof(2.0, 0.0, 0.0), y1, y4)
    with pytest.raises(DegenerateRange):
        tdf_range_dimension(D)


def test_tdf_dimension_generic():
    """[DERIVED] a generic roof gives a positive box-counting slope; the
    estimate is invariant under affine rescaling."""
    rng = np.random.default_rng(19)
    y1 = (rng.random(5000), rng.random(5000))
    y4 = (rng.random(5000), rng.random(5000))
    D, _ = temporal_distance(M1, GENERIC, y1, y4)
    est = tdf_range_dimension(D)
    assert est.slope > 0 and est.ci[0] > 0
    est2 = tdf_range_dimension(-3.7 * D + 11.0)
    assert est2.slope == pytest.approx(est.slope, abs=0.05)


# -------------------------------------------------------------------- periods
def test_period_fixed_point():
    """[TRIVIAL] word (0) on doubling: y = 0, T = phi(0)."""
    roof = affine_roof(1.0, 1.0)
    (rec,) = periodic_orbits(DOUBLING, roof, [(0,)])
    assert rec.points[0] == 0.0 and rec.T == 1.0 and rec.p == 1


def test_period_two_cycle():
    """[TRIVIAL] word (0, 1): y = 1/3, T = phi(1/3) + phi(2/3)."""
    roof = affine_roof(1.0, 1.0)
    (rec,) = periodic_orbits(DOUBLING, roof, [(0, 1)])
    assert rec.points[0] == pytest.approx(1 / 3, abs=1e-15)
    assert rec.T == pytest.approx(2 + 1 / 3 + 2 / 3, abs=1e-14)


@given(st.lists(st.integers(0, 1), min_size=1, max_size=6), st.integers(1, 5))
@settings(max_examples=50, deadline=None)
def test_period_additivity(word, k):
    """[TRIVIAL] T(w^k) = k T(w)."""
    roof = affine_roof(1.0, 0.5)
    a, b = periodic_orbits(DOUBLING, roof, [tuple(word), tuple(word) * k])
    assert b.T == pytest.approx(k * a.T, abs=1e-10)


def test_periodic_point_gauss():
    """[TRIVIAL] the Gauss fixed point of branch 1 is the golden mean."""
    gm = make_builtin("gauss")
    assert periodic_point(gm, (1,)) == pytest.approx((math.sqrt(5) - 1) / 2, abs=1e-14)


def test_periods_bad_word():
    """[TRIVIAL] labels must be branches."""
    with pytest.raises(BadParams):
        periodic_orbits(DOUBLING, affine_roof(1, 0), [(2,)])


# --------------------------------------------------------- continued fractions
def test_cf_golden_mean():
    """[TRIVIAL] the golden mean has all quotients 1."""
    g = (1 + math.sqrt(5)) / 2
    r = diophantine_ratio(g, 1.0, 0.0, depth=20)
    assert len(r.quotients) >= 10 and all(q == 1 for q in r.quotients) and not r.terminated


def test_cf_rational():
    """[TRIVIAL] ratio 2 terminates at [2]."""
    r = diophantine_ratio(5.0, 3.0, 1.0)
    assert r.quotients == [2] and r.terminated


def test_cf_sqrt2():
    """[DERIVED] sqrt 2 against a 50-digit decimal continued-fraction oracle."""
    decimal.getcontext().prec = 50
    x = decimal.Decimal(2).sqrt()
    oracle = []
    for _ in range(40):
        a = int(x)
        oracle.append(a)
        x = 1 / (x - a)
    r = diophantine_ratio(math.sqrt(2), 1.0, 0.0, depth=30)
    assert r.quotients == oracle[: len(r.quotients)] and len(r.quotients) >= 8
    assert r.quotients[:4] == [1, 2, 2, 2]


def test_cf_precision_exhausted():
    """[TRIVIAL] too wide an uncertainty cannot certify 3 quotients."""
    with pytest.raises(PrecisionExhausted):
        diophantine_ratio(math.sqrt(2), 1.0, 0.0, rel_err=1e-2)


# ------------------------------------------------------------ good asymptotics
def _synthetic(kappa=0.3, gamma=0.5, T0=2.0, Ns=range(1, 16), offset=0):
    return [(n + offset, (n + offset) * T0 + kappa + gamma ** (n + offset)) for n in Ns]


def test_good_asymptotics_recovers_parameters():
    """[DERIVED] data from the model with E_N = 1, omega = 0."""
    f = good_asymptotics_fit(_synthetic(), T0=2.0)
    assert f.kappa == pytest.approx(0.3, abs=1e-6)
    assert f.gamma == pytest.approx(0.5, abs=1e-6)
    assert f.omega == pytest.approx(0.0, abs=1e-6)
    assert np.allclose(f.E_N, 1.0, atol=1e-6) and not f.degenerate


def test_good_asymptotics_degenerate():
    """[TRIVIAL] exactly linear periods are flagged degenerate."""
    f = good_asymptotics_fit([(n, 2.0 * n + 0.3) for n in range(1, 12)], T0=2.0)
    assert f.degenerate and f.amplitude == 0.0 and f.kappa == pytest.approx(0.3)


def test_good_asymptotics_reindex():
    """[TRIVIAL] shifting N -> N + n0 changes only the amplitude reference."""
    a = good_asymptotics_fit(_synthetic(), T0=2.0)
    b = good_asymptotics_fit([(n + 3, T + 3 * 2.0) for n, T in _synthetic()], T0=2.0)
    assert b.kappa == pytest.approx(a.kappa, abs=1e-6)
    assert b.gamma == pytest.approx(a.gamma, abs=1e-6)
    assert b.amplitude == pytest.approx(a.amplitude * a.gamma**-3, rel=1e-5)


def test_good_asymptotics_too_few():
    """[TRIVIAL] fewer than min_records points cannot be fitted."""
    with pytest.raises(FitDiverged):
        good_asymptotics_fit(_synthetic(Ns=range(1, 4)), T0=2.0)


# --------------------------------------------------------- lifts and Hoelder
TORUS = BilliardTable.lorentz_torus([(0.5, 0.5, 0.25)])


def test_lift_constant():
    """[TRIVIAL] v = c lifts to c with vanishing seminorms."""
    sec = BilliardSection(TORUS)
    obs = lift_observable(sec, lambda q, v: 0.0 * q[:, 0] + 2.5, n_pairs=2000)
    assert obs.norms["sup"] == 2.5 and obs.norms["gamma"] == 0.0 and obs.norms["eta_holder"] == 0.0


def test_lift_position():
    """[TRIVIAL] the first position coordinate is bounded by the torus size;
    the fitted constant is finite."""
    sec = BilliardSection(TORUS)
    obs = lift_observable(sec, lambda q, v: q[:, 0], n_pairs=5000)
    assert obs.norms["sup"] <= 1.0
    assert np.isfinite(obs.norms["gamma"]) and obs.norms["pairs"] > 1000


def test_holder_constant_roof():
    """[TRIVIAL] a constant roof has vanishing constants."""
    r = holder_diagnostics(M1, fiber_roof(2.0, 0.0, 0.0), n_pairs=2000)
    assert r.C1_stable == 0.0 and r.C1_unstable == 0.0


def test_holder_fiber_slope():
    """[DERIVED] roof 1 + z/4: stable constant 1/4, contraction rate 1/2."""
    r = holder_diagnostics(M1, FIBER, n_pairs=5000)
    assert r.C1_stable == pytest.approx(0.25, rel=1e-6)
    assert r.contraction_rate == pytest.approx(0.5, rel=1e-3)


def test_holder_lorentz_section():
    """[PAPER] the free flight satisfies |h(y) - h(y')| <= C (d + gamma^s) with finite C."""
    r = holder_diagnostics(TORUS, n_pairs=10_000)
    assert np.isfinite(r.C1_unstable) and r.n_pairs > 5000
    assert "pairs" in r.to_text()


# -------------------------------------------------------- roof-tail inequality
def test_roof_tail_inequality_grid():
    """[PAPER] the inequality holds within 3 sigma on a small grid."""
    checks = roof_tail_inequality(LSV, INDUCED, [0, 1], [1, 3], [5.0, 50.0], n_samples=100_000, seed=1)
    assert len(checks) == 8 and all(c.holds for c in checks)
    # n = 1, i = 0 is an identity up to the factor 2
    c = checks[0]
    assert c.rhs == pytest.approx(2 * c.lhs)


# --------------------------------------------------------------- LSV flow
def test_lsv_flow_stationary():
    """[DERIVED] the stationary sampler is invariant under the flow (KS)."""
    flow = LSVFlow(0.5, l_max=10**5)
    rng = np.random.default_rng(20)
    a = flow.sample(50_000, rng)
    b = flow.sample(50_000, rng)
    flow.advance(b, 7.3)
    assert stats.ks_2samp(a["x"], b["x"]).pvalue > 0.005
    assert stats.ks_2samp(a["u"] / flow.r(a["x"]), b["u"] / flow.r(b["x"])).pvalue > 0.005
