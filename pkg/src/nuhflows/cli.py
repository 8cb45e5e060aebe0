"""Experiment runner: one JSON config = one experiment = one output directory.

Usage::

    nuhflows list
    nuhflows <experiment> --config cfg.json [--out DIR] [--seed N] [--threads N]
    nuhflows <experiment> --preset NAME [...]
    nuhflows show NAME            # print a preset's config

Environment variables NUHFLOWS_CONFIG, NUHFLOWS_PRESET, NUHFLOWS_OUT,
NUHFLOWS_SEED and NUHFLOWS_THREADS supply defaults; flags win over them.

Seeds.  Every random stream is derived from the config seed by
``split_seed(seed, role)`` = first word of ``SeedSequence([seed, ROLES[role]])``,
where ROLES is a fixed table of stream names.  Nothing reads ambient entropy,
and the thread count never changes the numbers (work is split by stream, not
by thread).
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import csvio
from .errors import BudgetTooSmall, ConfigInvalid, DegenerateRange, NuhflowsError

EXPERIMENTS = ("simulate", "tail", "correlate", "variance", "spectrum", "defect", "chi", "tdf", "periods",
               "laplace")

ROLES = {"start": 1, "checks": 2, "flights": 3, "roof": 4, "inequality": 5, "correlation": 6, "variance": 7,
         "identity": 8, "defect": 9, "chi": 10, "tdf": 11, "laplace": 12, "crosscheck": 13, "bootstrap": 14}


def split_seed(seed, role):
    """Independent 32-bit seed for the named stream."""
    return int(np.random.SeedSequence([int(seed), ROLES[role]]).generate_state(1)[0])


# --------------------------------------------------------------- validation
_REQ = object()


class Section:
    """A config mapping whose keys are consumed one by one; leftovers are errors."""

    def __init__(self, d, path):
        if not isinstance(d, dict):
            raise ConfigInvalid(f"{path}: expected a mapping, got {type(d).__name__}")
        self.d = d
        self.path = path
        self.used = set()

    def _p(self, key):
        return f"{self.path}.{key}" if self.path else key

    def has(self, key):
        return key in self.d

    def get(self, key, kind, default=_REQ, check=None, choices=None):
        p = self._p(key)
        self.used.add(key)
        if key not in self.d:
            if default is _REQ:
                raise ConfigInvalid(f"{p}: required key is missing")
            return copy.deepcopy(default)
        val = self.d[key]
        try:
            val = _coerce(val, kind)
        except (TypeError, ValueError):
            raise ConfigInvalid(f"{p}: expected {kind}, got {val!r}") from None
        if choices is not None and val not in choices:
            raise ConfigInvalid(f"{p}: must be one of {list(choices)}, got {val!r}")
        if check is not None:
            msg = check(val)
            if msg:
                raise ConfigInvalid(f"{p}: {msg}")
        return val

    def sub(self, key, default=_REQ):
        self.used.add(key)
        if key not in self.d:
            if default is _REQ:
                raise ConfigInvalid(f"{self._p(key)}: required section is missing")
            return Section(copy.deepcopy(default), self._p(key))
        return Section(self.d[key], self._p(key))

    def done(self):
        extra = sorted(set(self.d) - self.used)
        if extra:
            raise ConfigInvalid(f"{self._p(extra[0])}: unknown key")


def _coerce(val, kind):
    if kind == "int":
        if isinstance(val, bool) or not float(val).is_integer():
            raise ValueError
        return int(val)
    if kind == "float":
        if isinstance(val, bool):
            raise ValueError
        v = float(val)
        if not math.isfinite(v):
            raise ValueError
        return v
    if kind == "bool":
        if not isinstance(val, bool):
            raise ValueError
        return val
    if kind == "str":
        if not isinstance(val, str):
            raise ValueError
        return val
    if kind == "floats":
        if not isinstance(val, list) or not val:
            raise ValueError
        return [_coerce(x, "float") for x in val]
    if kind == "ints":
        if not isinstance(val, list) or not val:
            raise ValueError
        return [_coerce(x, "int") for x in val]
    if kind == "any":
        return val
    raise AssertionError(kind)


def _positive(v):
    return None if v > 0 else "must be positive"


def _at_least(m):
    return lambda v: None if v >= m else f"must be >= {m}"


def _pair(v):
    return None if len(v) == 2 and v[0] < v[1] else "must be [lo, hi] with lo < hi"


def _grid(sec: Section, key, default=_REQ):
    """A time grid: a list, or {"linspace"|"geomspace": [a, b, n], "prepend_zero": bool}."""
    p = sec._p(key)
    sec.used.add(key)
    if key not in sec.d:
        if default is _REQ:
            raise ConfigInvalid(f"{p}: required key is missing")
        return np.asarray(default, dtype=float)
    val = sec.d[key]
    if isinstance(val, list):
        try:
            t = np.array([_coerce(x, "float") for x in val])
        except (TypeError, ValueError):
            raise ConfigInvalid(f"{p}: expected a list of numbers") from None
    else:
        g = Section(val, p)
        kinds = [k for k in ("linspace", "geomspace") if g.has(k)]
        if len(kinds) != 1:
            raise ConfigInvalid(f"{p}: give exactly one of linspace, geomspace")
        a, b, n = g.get(kinds[0], "floats", check=lambda v: None if len(v) == 3 and v[2] >= 2 and float(v[2]).is_integer()
                        else "must be [start, stop, n] with integer n >= 2")
        if kinds[0] == "geomspace" and a <= 0:
            raise ConfigInvalid(f"{p}.geomspace: start must be positive")
        t = (np.linspace if kinds[0] == "linspace" else np.geomspace)(a, b, int(n))
        if g.get("prepend_zero", "bool", False):
            t = np.concatenate([[0.0], t])
        g.done()
    if t.size == 0 or t[0] < 0 or np.any(np.diff(t) <= 0):
        raise ConfigInvalid(f"{p}: must be strictly increasing and >= 0")
    return t


# ----------------------------------------------------------------- backends
BACKENDS = ("billiard", "gm", "lsv_flow", "two_sided")
OBSERVABLES = {
    "billiard": ("vx", "vy", "cos_qx"),
    "gm": ("cos_bump", "fiber_cos", "bump", "one"),
    "lsv_flow": ("bump",),
    "two_sided": ("cos_bump", "fiber_cos"),
}


def _parse_backend(sec: Section, allowed):
    kind = sec.get("kind", "str", choices=allowed)
    spec = {"kind": kind}
    if kind == "billiard":
        from .billiard import table_from_config
        tsec = sec.sub("table")
        tsec.used = set(tsec.d)
        try:
            spec["table"] = table_from_config(tsec.d)
        except ConfigInvalid as exc:
            raise ConfigInvalid(f"{sec.path}.{exc}") from None
        spec["reverse"] = sec.get("reverse", "bool", False)
    elif kind == "gm":
        from .gibbs_markov import make_builtin
        from .errors import BadParams
        name = sec.get("system", "str", choices=("doubling", "gauss", "lsv_induced"))
        params = sec.get("system_params", "any", {})
        if not isinstance(params, dict):
            raise ConfigInvalid(f"{sec.path}.system_params: expected a mapping")
        try:
            spec["gm"] = make_builtin(name, params)
        except BadParams as exc:
            raise ConfigInvalid(f"{sec.path}.system_params: {exc}") from None
        spec["roof"] = _parse_roof(sec.sub("roof"), spec["gm"])
    elif kind == "lsv_flow":
        spec["alpha"] = sec.get("alpha", "float", 0.5, check=lambda v: None if 0 < v < 1 else "must lie in (0, 1)")
        spec["r"] = sec.get("r", "floats", [1.0, 1.0], check=lambda v: None if len(v) == 2 and v[0] > 0 and v[0] + v[1] > 0
                            else "must be [r0, r1] with r0 + r1 x > 0 on [0, 1]")
        spec["l_max"] = sec.get("l_max", "int", 10**6, check=_at_least(100))
    else:
        spec["power"] = sec.get("power", "int", 1, check=_at_least(1))
        r = sec.sub("roof", {})
        spec["roof_c"] = r.get("c", "float", 1.0)
        spec["roof_a"] = r.get("a", "float", 0.0)
        spec["roof_k"] = r.get("k", "float", 0.25)
        r.done()
    sec.done()
    return spec


def _parse_roof(sec: Section, gm):
    from .gibbs_markov import Roof, affine_roof, constant_roof
    t = sec.get("type", "str", choices=("affine", "constant", "induced"))
    if t == "affine":
        c0 = sec.get("c0", "float")
        c1 = sec.get("c1", "float", 0.0)
        if min(c0, c0 + c1) <= 0:
            raise ConfigInvalid(f"{sec.path}: roof must be positive on the base")
        roof = affine_roof(c0, c1)
    elif t == "constant":
        roof = constant_roof(sec.get("c", "float", check=_positive))
    else:
        if gm.name != "lsv_induced":
            raise ConfigInvalid(f"{sec.path}.type: the induced roof needs system lsv_induced")
        roof = Roof(None, "induced return time", induced=True)
    sec.done()
    return roof


def _build_backend(spec):
    """The simulation object for a parsed backend spec."""
    kind = spec["kind"]
    if kind == "billiard":
        from .stats import BilliardFlow
        return BilliardFlow(spec["table"], reverse=spec["reverse"])
    if kind == "gm":
        from .suspension import SuspensionFlow
        return SuspensionFlow(spec["gm"], spec["roof"])
    if kind == "lsv_flow":
        from .suspension import LSVFlow
        return LSVFlow(spec["alpha"], tuple(spec["r"]), l_max=spec["l_max"])
    from .suspension import SuspensionFlow, TwoSidedModel, fiber_roof
    return SuspensionFlow(TwoSidedModel(spec["power"]), fiber_roof(spec["roof_c"], spec["roof_a"], spec["roof_k"]))


def _observable(backend, kind, name):
    if kind == "billiard":
        if name in ("vx", "vy"):
            return lambda st: st[name]
        return lambda st: np.cos(2 * np.pi * st["qx"])
    if kind == "lsv_flow":
        from .suspension import bump_observable
        return bump_observable(backend.r0, backend.r1)
    if name == "one":
        return lambda st: np.ones_like(st["u"])
    if name == "fiber_cos":
        return lambda st: np.cos(2 * np.pi * st["u"])
    if name == "bump":
        return lambda st: np.sin(np.pi * st["u"] / backend.phi(st)) ** 2
    return lambda st: np.cos(2 * np.pi * st["y"]) * np.sin(np.pi * st["u"] / backend.phi(st)) ** 2


# -------------------------------------------------------------- experiments
class Run:
    """Context handed to experiment runners: output dir, seed, threads,
    and the registry of files written."""

    def __init__(self, out, seed, threads):
        self.out = Path(out)
        self.seed = seed
        self.threads = threads
        self.outputs = {}
        self.results = {}

    def write(self, fname, schema, columns):
        path = self.out / fname
        csvio.write_csv(path, schema, columns)
        self.outputs[fname] = schema

    def seed_for(self, role):
        return split_seed(self.seed, role)


def _ctx(path, fn, *a, **kw):
    """Call fn, re-raising package errors with the config key they relate to."""
    try:
        return fn(*a, **kw)
    except NuhflowsError as exc:
        raise type(exc)(f"{path}: {exc}") from exc


# simulate ------------------------------------------------------------------
def parse_simulate(p: Section, backend):
    out = {"n_events": p.get("n_events", "int", 1000, check=_at_least(1))}
    if p.has("start"):
        s = p.sub("start")
        out["start"] = (s.get("component", "int", 0), s.get("r", "float"), s.get("phi", "float"))
        s.done()
    c = p.sub("checks", {"enabled": False})
    out["checks"] = {"enabled": c.get("enabled", "bool", True),
                     "n_events": c.get("n_events", "int", 1_000_000, check=_at_least(1000)),
                     "n_reversal": c.get("n_reversal", "int", 1000, check=_at_least(1)),
                     "n_pairs": c.get("n_pairs", "int", 10_000, check=_at_least(100)),
                     "n_invariance": c.get("n_invariance", "int", 20_000, check=_at_least(100)),
                     "level": c.get("level", "float", 0.01)}
    c.done()
    if backend["kind"] == "billiard" and out["checks"]["enabled"] and backend["table"].variant != "lorentz-torus":
        raise ConfigInvalid("simulate.checks.enabled: the invariant suite runs on Lorentz tori")
    return out


def run_simulate(r: Run, backend, p):
    from .billiard import CollisionState, sample_invariant, trajectory
    table = backend["table"]
    if "start" in p:
        comp, rr, phi = p["start"]
        x = _ctx("simulate.start", CollisionState.at, table, comp, rr, phi)
    else:
        b = sample_invariant(table, r.seed_for("start"), 1)
        x = CollisionState(int(b.comp[0]), float(b.s[0]), float(b.phi[0]), float(b.r[0]))
    comp, rr, phi, h = _ctx("simulate", trajectory, table, x, p["n_events"])
    r.write("trajectory.csv", "trajectory", {"event_index": np.arange(comp.size), "component": comp,
                                             "r": rr, "phi": phi, "flight_time": h})
    r.results["mean_flight"] = float(np.mean(h[1:])) if h.size > 1 else float("nan")
    c = p["checks"]
    if c["enabled"]:
        from .billiard.checks import bilroof_violations, invariance_test, reversibility, speed_and_reflection
        s = r.seed_for("checks")
        drift, refl, events = speed_and_reflection(table, c["n_events"], s)
        rev = reversibility(table, c["n_reversal"], s)
        viol, pairs = bilroof_violations(table, c["n_pairs"], s)
        ok, pv = invariance_test(table, c["n_invariance"], s, c["level"])
        r.results["checks"] = {
            "speed_drift": drift, "speed_events": events, "speed_ok": drift < 1e-12,
            "reflection_error": refl, "reflection_ok": refl < 1e-12,
            "reversibility_error": rev, "reversibility_ok": rev < 1e-9,
            "bilroof_violations": viol, "bilroof_pairs": pairs, "bilroof_ok": viol == 0,
            "invariance_pvalues": pv, "invariance_ok": ok}


# tail ----------------------------------------------------------------------
def parse_tail(p: Section, backend):
    out = {"n": p.get("n", "int", check=_at_least(100_000)),
           "n_chains": p.get("n_chains", "int", 64, check=_at_least(1)),
           "t_grid": _grid(p, "t_grid", np.geomspace(1, 200, 40)),
           "window": p.get("window", "floats", None, check=_pair),
           "n_boot": p.get("n_boot", "int", 200, check=_at_least(10))}
    if out["t_grid"][0] <= 0:
        raise ConfigInvalid("tail.t_grid: thresholds must be positive")
    if p.has("inequality"):
        if backend["kind"] != "gm":
            raise ConfigInvalid("tail.inequality: needs a gm backend")
        q = p.sub("inequality")
        out["inequality"] = {"i": q.get("i", "ints", check=lambda v: None if min(v) >= 0 else "must be >= 0"),
                             "n": q.get("n", "ints", check=lambda v: None if min(v) >= 1 else "must be >= 1"),
                             "t": q.get("t", "floats", check=lambda v: None if min(v) > 0 else "must be positive"),
                             "eta": q.get("eta", "float", 1.0, check=_positive),
                             "n_samples": q.get("n_samples", "int", 1_000_000, check=_at_least(1000)),
                             "n_sigma": q.get("n_sigma", "float", 3.0, check=_positive)}
        q.done()
    return out


def run_tail(r: Run, backend, p):
    from .stats import tail_survival
    if backend["kind"] == "billiard":
        from .billiard import free_flights
        x, info = free_flights(backend["table"], p["n"], r.seed_for("flights"), p["n_chains"], threads=r.threads)
        r.results["flights"] = info
    else:
        gm, roof = backend["gm"], backend["roof"]
        y = gm.sample(p["n"], np.random.default_rng(r.seed_for("roof")))
        x = roof(gm, y)
    est = _ctx("tail", tail_survival, x, p["t_grid"], p["window"], p["n_boot"], r.seed_for("bootstrap"))
    r.write("tail.csv", "tail", {"t": est.t, "survival": est.survival, "se": est.se})
    r.results.update({"samples": int(x.size), "slope": est.slope, "ci": est.ci, "window": est.window,
                      "curvature": est.curvature, "curvature_se": est.curvature_se, "power_law": est.power_law})
    if "inequality" in p:
        from .suspension import roof_tail_inequality
        q = p["inequality"]
        rows = _ctx("tail.inequality", roof_tail_inequality, backend["gm"], backend["roof"], q["i"], q["n"], q["t"],
                    q["eta"], q["n_samples"], r.seed_for("inequality"), q["n_sigma"])
        r.write("inequality.csv", "inequality", {k: [getattr(c, k) for c in rows]
                                                 for k in ("i", "n", "t", "lhs", "rhs", "se", "holds")})
        r.results["inequality_all_hold"] = all(c.holds for c in rows)
        r.results["inequality_checks"] = len(rows)


# correlate -----------------------------------------------------------------
def _obs_key(p: Section, key, backend, default=_REQ):
    return p.get(key, "str", default, choices=OBSERVABLES[backend["kind"]])


def parse_correlate(p: Section, backend):
    if backend["kind"] == "gm" and backend["roof"].induced:
        raise ConfigInvalid("backend.roof.type: correlations over the induced roof use the lsv_flow backend")
    out = {"v": _obs_key(p, "v", backend), "w": _obs_key(p, "w", backend, None),
           "t_grid": _grid(p, "t_grid"),
           "budget": p.get("budget", "int", check=_at_least(1)),
           "batches": p.get("batches", "int", 20, check=_at_least(2)),
           "fit_window": p.get("fit_window", "floats", None, check=_pair),
           "laplace": p.get("laplace", "floats", None)}
    out["w"] = out["w"] or out["v"]
    return out


def _correlate(r: Run, backend, obj, v, w, t, budget, batches, path, role):
    from .stats import correlation
    fv = _observable(obj, backend["kind"], v)
    fw = _observable(obj, backend["kind"], w)
    try:
        return correlation(obj, fv, fw, t, budget, r.seed_for(role), batches, threads=r.threads)
    except BudgetTooSmall as exc:
        raise BudgetTooSmall(f"{path}.budget: {exc}") from exc


def run_correlate(r: Run, backend, p):
    from .stats import decay_exponent_fit, laplace_transform
    obj = _build_backend(backend)
    ser = _correlate(r, backend, obj, p["v"], p["w"], p["t_grid"], p["budget"], p["batches"], "correlate",
                     "correlation")
    r.write("correlation.csv", "correlation", {"t": ser.t, "rho": ser.rho, "se": ser.se,
                                               "n_samples": np.full(ser.t.size, ser.n_samples)})
    if p["fit_window"] is not None:
        b, ci, info = _ctx("correlate.fit_window", decay_exponent_fit, ser, tuple(p["fit_window"]))
        r.results.update({"decay_exponent": b, "decay_ci": ci, "fit": info})
    if p["laplace"]:
        r.results["laplace"] = {str(s): {"value": complex(laplace_transform(ser, s)[0]).real,
                                         "se": laplace_transform(ser, s)[1]} for s in p["laplace"]}


# variance ------------------------------------------------------------------
def parse_variance(p: Section, backend):
    if backend["kind"] == "gm" and backend["roof"].induced:
        raise ConfigInvalid("backend.roof.type: use the lsv_flow backend for the induced roof")
    out = {"v": _obs_key(p, "v", backend),
           "t_grid": _grid(p, "t_grid"),
           "ensemble": p.get("ensemble", "int", check=_at_least(1000)),
           "mode": p.get("mode", "str", "ensemble", choices=("ensemble", "increments")),
           "step": p.get("step", "float", None, check=_positive),
           "horizon": p.get("horizon", "float", None, check=_positive),
           "window": p.get("window", "floats", None, check=_pair)}
    if p.has("identity"):
        q = p.sub("identity")
        out["identity"] = {"t_grid": _grid(q, "t_grid"), "budget": q.get("budget", "int", check=_at_least(1)),
                           "batches": q.get("batches", "int", 20, check=_at_least(2))}
        q.done()
    return out


def run_variance(r: Run, backend, p):
    from .stats import variance_correlation_identity, variance_growth
    obj = _build_backend(backend)
    v = p["v"] if p["v"] in ("vx", "vy") else _observable(obj, backend["kind"], p["v"])
    var = _ctx("variance", variance_growth, obj, v, p["t_grid"], p["ensemble"], r.seed_for("variance"),
               tuple(p["window"]) if p["window"] else None, None, p["mode"], p["horizon"], p["step"])
    r.write("variance.csv", "variance", {"t": var.t, "var": var.var, "se": var.se})
    r.results.update({"trajectories": var.n, "fits": var.fits})
    if "identity" in p:
        q = p["identity"]
        ser = _correlate(r, backend, obj, p["v"], p["v"], q["t_grid"], q["budget"], q["batches"],
                         "variance.identity", "identity")
        r.write("correlation.csv", "correlation", {"t": ser.t, "rho": ser.rho, "se": ser.se,
                                                   "n_samples": np.full(ser.t.size, ser.n_samples)})
        res = _ctx("variance.identity", variance_correlation_identity, ser, var)
        r.results["identity"] = {"identity": res["identity"].tolist(), "rel_err": res["rel_err"].tolist(),
                                 "max_rel_err": res["max_rel_err"]}


# spectrum ------------------------------------------------------------------
def parse_spectrum(p: Section, backend):
    if backend["kind"] != "gm":
        raise ConfigInvalid("backend.kind: spectrum needs a gm backend")
    out = {"b_range": p.get("b_range", "floats", [-0.2, 0.2], check=_pair),
           "n": p.get("n", "int", 50, check=_at_least(1)),
           "re": p.get("re", "float", 0.0, check=lambda v: None if v >= 0 else "must be >= 0"),
           "resolution": p.get("resolution", "int", 64, check=_at_least(8)),
           "lambda_prime": p.get("lambda_prime", "bool", True),
           "h": p.get("h", "float", 1e-4, check=_positive)}
    return out


def spectrum_grid(lo, hi, n):
    """n points on [lo, hi]; the point nearest 0 is snapped to exactly 0
    when 0 lies in the range, so the s = 0 row is always present."""
    b = np.linspace(lo, hi, n)
    if lo <= 0 <= hi:
        b[np.argmin(np.abs(b))] = 0.0
    return b


def run_spectrum(r: Run, backend, p):
    from .gibbs_markov import lambda_prime, leading_eigenvalue
    gm, roof = backend["gm"], backend["roof"]
    b = spectrum_grid(*p["b_range"], p["n"])
    s = p["re"] + 1j * b
    window = 1.01 * float(np.max(np.abs(s))) + 1e-12
    rows = [_ctx("spectrum", leading_eigenvalue, gm, roof, sk, p["resolution"], max(0.2, window)) for sk in s]
    lam = np.array([x.lam for x in rows])
    r.write("spectrum.csv", "spectrum", {"s_re": s.real, "s_im": s.imag, "lambda_re": lam.real,
                                         "lambda_im": lam.imag, "residual": [x.residual for x in rows]})
    zero = np.nonzero(s == 0)[0]
    if zero.size:
        r.results["lambda0"] = [lam[zero[0]].real, lam[zero[0]].imag]
        r.results["lambda0_error"] = float(abs(lam[zero[0]] - 1))
    if p["lambda_prime"]:
        lp = complex(_ctx("spectrum.lambda_prime", lambda_prime, gm, roof, p["h"], p["resolution"]))
        integral = roof.integral(gm)
        r.results.update({"lambda_prime": [lp.real, lp.imag], "roof_integral": integral,
                          "lambda_prime_error": abs(lp + integral)})


# defect --------------------------------------------------------------------
def parse_defect(p: Section, backend):
    if backend["kind"] != "gm":
        raise ConfigInvalid("backend.kind: defect needs a gm backend")
    gm = backend["gm"]
    out = {"Z0": p.get("Z0", "ints", list(gm.branch_labels()[:2])),
           "b": p.get("b", "floats", check=lambda v: None if all(x != 0 for x in v) else "b must be nonzero"),
           "xi": p.get("xi", "floats", [1.0], check=lambda v: None if min(v) > 0 else "must be positive"),
           "resolution": p.get("resolution", "int", 64, check=_at_least(8)),
           "n_samples": p.get("n_samples", "int", 2000, check=_at_least(10))}
    return out


def run_defect(r: Run, backend, p):
    from .gibbs_markov import approx_eigenfunction_defect, defect_horizon
    gm, roof = backend["gm"], backend["roof"]
    rows = {"b": [], "xi": [], "n": [], "defect": [], "psi": []}
    for b in p["b"]:
        for xi in p["xi"]:
            res = _ctx("defect", approx_eigenfunction_defect, gm, roof, p["Z0"], b, xi, p["resolution"],
                       p["n_samples"], r.seed_for("defect"))
            for k, v in zip(rows, (b, xi, defect_horizon(b, xi), res.defect, res.psi)):
                rows[k].append(v)
    r.write("defect.csv", "defect", rows)
    r.results["min_defect"] = float(min(rows["defect"]))


# chi -----------------------------------------------------------------------
def parse_chi(p: Section, backend):
    if backend["kind"] != "two_sided":
        raise ConfigInvalid("backend.kind: chi needs a two_sided backend")
    return {"n": p.get("n", "int", 10_000, check=_at_least(10)),
            "tol": p.get("tol", "float", 1e-12, check=_positive),
            "roundtrip": p.get("roundtrip", "bool", True),
            "fiber_points": p.get("fiber_points", "int", 64, check=_at_least(2))}


def run_chi(r: Run, backend, p):
    from .suspension import chi, conjugacies, tilde_phi
    from .suspension.models import _reduce
    obj = _build_backend(backend)
    model, roof = obj.base, obj.roof
    rng = np.random.default_rng(r.seed_for("chi"))
    y, z = model.sample(p["n"], rng)
    c, bound = _ctx("chi", chi, model, roof, y, z, tol=p["tol"], return_bound=True)
    tp = _ctx("chi", tilde_phi, model, roof, y, z, tol=p["tol"])
    r.write("chi.csv", "chi", {"ybar": y, "z": z, "chi": c, "tilde_phi": tp, "bound": np.full(y.size, bound)})
    # spread of tilde phi along stable fibers
    m = min(p["n"], 2000)
    zz = rng.random((m, p["fiber_points"]))
    yy = np.repeat(y[:m, None], p["fiber_points"], 1)
    tv = tilde_phi(model, roof, yy, zz, tol=p["tol"])
    r.results.update({"chi_sup": float(np.max(np.abs(c))), "chi_bound": bound,
                      "fiber_constant_roof": roof.fiber_constant,
                      "tilde_phi_fiber_variance": float(np.max(np.var(tv, axis=1)))})
    if p["roundtrip"]:
        conj = _ctx("chi.roundtrip", conjugacies, model, roof, None, r.seed_for("chi"))
        u = rng.random(p["n"]) * model.phi(roof, y, z)
        a = conj.g_minus(*conj.g_plus(y, z, u))
        b = _reduce(model, y, z, u + conj.shift, lambda s, t: model.phi(roof, s, t))[:3]
        err = max(float(np.max(np.abs(a[k] - b[k]))) for k in range(3))
        r.results.update({"roundtrip_error": err, "shift": conj.shift})


# tdf -----------------------------------------------------------------------
def parse_tdf(p: Section, backend):
    if backend["kind"] != "two_sided":
        raise ConfigInvalid("backend.kind: tdf needs a two_sided backend")
    return {"n": p.get("n", "int", 2000, check=_at_least(2)),
            "K": p.get("K", "int", 40, check=_at_least(1))}


def run_tdf(r: Run, backend, p):
    from .suspension import tdf_range_dimension, temporal_distance
    obj = _build_backend(backend)
    rng = np.random.default_rng(r.seed_for("tdf"))
    y1, z1 = obj.base.sample(p["n"], rng)
    y4, z4 = obj.base.sample(p["n"], rng)
    D, rem = _ctx("tdf", temporal_distance, obj.base, obj.roof, (y1, z1), (y4, z4), p["K"])
    r.write("tdf.csv", "tdf", {"y1": y1, "y4": y4, "D": D, "remainder_bound": np.full(p["n"], rem),
                               "z1": z1, "z4": z4})
    r.results["remainder_bound"] = rem
    try:
        bd = tdf_range_dimension(D)
        r.results.update({"degenerate": False, "box_dimension": bd.slope, "box_ci": bd.ci})
    except DegenerateRange as exc:
        r.results.update({"degenerate": True, "reason": str(exc)})


# periods -------------------------------------------------------------------
def parse_periods(p: Section, backend):
    if backend["kind"] != "gm":
        raise ConfigInvalid("backend.kind: periods needs a gm backend")
    gm = backend["gm"]
    if p.has("words") == p.has("max_length"):
        raise ConfigInvalid("periods: give exactly one of words, max_length")
    if p.has("words"):
        words = p.get("words", "any")
        if not isinstance(words, list) or not words:
            raise ConfigInvalid("periods.words: expected a non-empty list of label lists")
        for k, w in enumerate(words):
            if not isinstance(w, list) or not w or not all(isinstance(j, int) and not isinstance(j, bool) for j in w):
                raise ConfigInvalid(f"periods.words[{k}]: expected a non-empty list of integer labels")
    else:
        L = p.get("max_length", "int", check=lambda v: None if 1 <= v <= 12 else "must lie in [1, 12]")
        if gm.countable:
            raise ConfigInvalid("periods.max_length: enumerating words needs a finite alphabet")
        import itertools
        labels = list(gm.branch_labels())
        words = [list(w) for n in range(1, L + 1) for w in itertools.product(labels, repeat=n)]
    out = {"words": words,
           "cf": p.get("cf", "ints", None, check=lambda v: None if len(v) == 3 else "must list three record indices"),
           "asymptotics": p.get("asymptotics", "bool", False)}
    if out["cf"] and max(out["cf"]) >= len(words):
        raise ConfigInvalid("periods.cf: index beyond the word list")
    return out


def run_periods(r: Run, backend, p):
    from .suspension import diophantine_ratio, good_asymptotics_fit, periodic_orbits
    recs = _ctx("periods.words", periodic_orbits, backend["gm"], backend["roof"], p["words"])
    r.write("periods.csv", "periods", {"word": ["-".join(map(str, x.word)) for x in recs],
                                       "p": [x.p for x in recs], "T": [x.T for x in recs]})
    if p["cf"]:
        T = [recs[k].T for k in p["cf"]]
        cf = _ctx("periods.cf", diophantine_ratio, *T)
        r.results["continued_fraction"] = {"quotients": cf.quotients, "terminated": cf.terminated,
                                           "liouville_flag": cf.liouville_flag, "ratio": cf.ratio}
    if p["asymptotics"]:
        fit = _ctx("periods.asymptotics", good_asymptotics_fit, recs)
        r.results["asymptotics"] = {"kappa": fit.kappa, "gamma": fit.gamma, "omega": fit.omega,
                                    "amplitude": fit.amplitude, "degenerate": fit.degenerate,
                                    "liminf_E": fit.liminf_E}


# laplace -------------------------------------------------------------------
def parse_laplace(p: Section, backend):
    if backend["kind"] != "gm" or backend["roof"].induced:
        raise ConfigInvalid("backend.kind: laplace needs a gm backend with a bounded roof")
    out = {"v": _obs_key(p, "v", backend), "w": _obs_key(p, "w", backend, None),
           "s": p.get("s", "floats", check=lambda v: None if min(v) > 0 else "Re s must be positive"),
           "n_max": p.get("n_max", "int", 30, check=_at_least(1)),
           "budget": p.get("budget", "int", 200_000, check=_at_least(1000)),
           "n_gl": p.get("n_gl", "int", 24, check=_at_least(2))}
    out["w"] = out["w"] or out["v"]
    if p.has("crosscheck"):
        q = p.sub("crosscheck")
        out["crosscheck"] = {"t_grid": _grid(q, "t_grid"), "budget": q.get("budget", "int", check=_at_least(1)),
                             "batches": q.get("batches", "int", 20, check=_at_least(2))}
        q.done()
    return out


def run_laplace(r: Run, backend, p):
    from .stats import laplace_series, laplace_transform
    obj = _build_backend(backend)
    fv = _observable(obj, "gm", p["v"])
    fw = _observable(obj, "gm", p["w"])
    res = _ctx("laplace", laplace_series, obj, fv, fw, p["s"], p["n_max"], p["budget"], r.seed_for("laplace"),
               p["n_gl"])
    r.write("laplace.csv", "laplace", {"s_re": [x.s.real for x in res], "s_im": [x.s.imag for x in res],
                                       "rho_hat_re": [x.rho_hat.real for x in res],
                                       "rho_hat_im": [x.rho_hat.imag for x in res],
                                       "n_max": [x.n_max for x in res], "tail_bound": [x.tail_bound for x in res]})
    r.results["series"] = {str(x.s.real): {"rho_hat": x.rho_hat.real, "se": x.se,
                                           "terms": np.abs(x.terms).tolist(), "term_se": x.term_se.tolist(),
                                           "term_bound": x.term_bound.tolist()} for x in res}
    if "crosscheck" in p:
        q = p["crosscheck"]
        ser = _correlate(r, backend, obj, p["v"], p["w"], q["t_grid"], q["budget"], q["batches"],
                         "laplace.crosscheck", "crosscheck")
        r.write("correlation.csv", "correlation", {"t": ser.t, "rho": ser.rho, "se": ser.se,
                                                   "n_samples": np.full(ser.t.size, ser.n_samples)})
        cc = {}
        for x in res:
            val, se = laplace_transform(ser, x.s)
            comb = math.hypot(se, x.se)
            diff = abs(val.real - x.rho_hat.real)
            cc[str(x.s.real)] = {"time_domain": val.real, "time_domain_se": se, "difference": diff,
                                 "combined_se": comb, "relative": diff / abs(x.rho_hat.real)}
        r.results["crosscheck"] = cc


RUNNERS = {name: (globals()[f"parse_{name}"], globals()[f"run_{name}"]) for name in EXPERIMENTS}
BACKENDS_FOR = {"simulate": ("billiard",), "tail": ("billiard", "gm"), "correlate": BACKENDS,
                "variance": BACKENDS, "spectrum": ("gm",), "defect": ("gm",), "chi": ("two_sided",),
                "tdf": ("two_sided",), "periods": ("gm",), "laplace": ("gm",)}


# ------------------------------------------------------------------ presets
PRESETS = {
    "lorentz-flight-tail": {
        "claim": "free flight tail mu_X(h > t) ~ t^-2 in infinite horizon (criterion 1)",
        "config": {"experiment": "tail", "seed": 7,
                   "backend": {"kind": "billiard", "table": {"variant": "lorentz-torus",
                                                             "scatterers": [[0.0, 0.0, 0.25]]}},
                   "tail": {"n": 10_000_000, "n_chains": 250, "t_grid": {"geomspace": [5, 100, 30]},
                            "window": [5, 100]}}},
    "beta2-decay": {
        "claim": "correlations decay like t^-(beta-1) = t^-1 for beta = 2 (criterion 2)",
        "config": {"experiment": "correlate", "seed": 1,
                   "backend": {"kind": "lsv_flow", "alpha": 0.5, "r": [1.0, 1.0]},
                   "correlate": {"v": "bump", "t_grid": {"geomspace": [1, 200, 30], "prepend_zero": True},
                                 "budget": 10_000_000, "fit_window": [10, 200]}}},
    "spectral-identities": {
        "claim": "lambda(0) = 1 and lambda'(0) = -int phi (criterion 3)",
        "config": {"experiment": "spectrum", "seed": 0,
                   "backend": {"kind": "gm", "system": "doubling", "roof": {"type": "affine", "c0": 1.0, "c1": 0.5}},
                   "spectrum": {"b_range": [-0.2, 0.2], "n": 50, "resolution": 64}}},
    "coboundary-reduction": {
        "claim": "chi = 0 for fiber-constant roofs; g- o g+ is the time-2|chi| map; tilde phi is fiber constant "
                 "(criterion 4)",
        "config": {"experiment": "chi", "seed": 0,
                   "backend": {"kind": "two_sided", "power": 4, "roof": {"c": 1.0, "a": 0.1, "k": 0.25}},
                   "chi": {"n": 10_000}}},
    "variance-tlogt": {
        "claim": "superdiffusive t log t variance growth in infinite horizon (criterion 5)",
        "config": {"experiment": "variance", "seed": 0,
                   "backend": {"kind": "billiard", "table": {"variant": "lorentz-torus",
                                                             "scatterers": [[0.0, 0.0, 0.25]]}},
                   "variance": {"v": "vx", "t_grid": {"geomspace": [10, 1000, 12]}, "ensemble": 1000,
                                "mode": "increments", "step": 10, "horizon": 20000, "window": [10, 1000]}}},
    "variance-finite-horizon": {
        "claim": "diffusive (c t) variance growth in finite horizon, the control for criterion 5",
        "config": {"experiment": "variance", "seed": 0,
                   "backend": {"kind": "billiard", "table": {"variant": "lorentz-torus",
                                                             "scatterers": [[0.0, 0.0, 0.4], [0.5, 0.5, 0.3]]}},
                   "variance": {"v": "vx", "t_grid": {"geomspace": [10, 1000, 12]}, "ensemble": 1000,
                                "mode": "increments", "step": 10, "horizon": 20000, "window": [10, 1000]}}},
    "nonmixing-resonance": {
        "claim": "constant roof: exact eigenfunctions at b = 2 pi k, so the flow does not mix (criterion 6)",
        "config": {"experiment": "defect", "seed": 0,
                   "backend": {"kind": "gm", "system": "doubling", "roof": {"type": "constant", "c": 1.0}},
                   "defect": {"Z0": [0, 1], "b": [6.283185307179586, 12.566370614359172, 18.84955592153876],
                              "xi": [1.0, 2.0]}}},
    "laplace-crosscheck": {
        "claim": "rho_hat(s) = sum of J_n matches the transformed correlation (criterion 7)",
        "config": {"experiment": "laplace", "seed": 0,
                   "backend": {"kind": "gm", "system": "doubling", "roof": {"type": "affine", "c0": 1.0, "c1": 0.5}},
                   "laplace": {"v": "cos_bump", "s": [0.5, 1.0, 2.0], "n_max": 30, "budget": 200_000,
                               "crosscheck": {"t_grid": {"linspace": [0, 40, 801]}, "budget": 100_000}}}},
    "variance-correlation-identity": {
        "claim": "Var(t) = 2 int_0^t (t - r) rho(r) dr (criterion 8)",
        "config": {"experiment": "variance", "seed": 0,
                   "backend": {"kind": "gm", "system": "doubling", "roof": {"type": "affine", "c0": 1.0, "c1": 0.5}},
                   "variance": {"v": "cos_bump", "t_grid": [0, 1, 2, 4, 6, 8, 10], "ensemble": 400_000,
                                "identity": {"t_grid": {"linspace": [0, 10, 401]}, "budget": 400_000}}}},
    "roof-tail-inequality": {
        "claim": "roof tail inequality for all i >= 0, n >= 1 on lsv_induced(1/2) (criterion 9)",
        "config": {"experiment": "tail", "seed": 0,
                   "backend": {"kind": "gm", "system": "lsv_induced", "system_params": {"alpha": 0.5},
                               "roof": {"type": "induced"}},
                   "tail": {"n": 1_000_000, "t_grid": {"geomspace": [2, 200, 30]},
                            "inequality": {"i": [0, 1, 3], "n": [1, 2, 4], "t": [2, 5, 10, 20, 50],
                                           "n_samples": 1_000_000}}}},
    "billiard-invariants": {
        "claim": "speed, reflection, reversibility, flight-time Lipschitz bound and mu_X invariance (criterion 10)",
        "config": {"experiment": "simulate", "seed": 0,
                   "backend": {"kind": "billiard", "table": {"variant": "lorentz-torus",
                                                             "scatterers": [[0.0, 0.0, 0.25]]}},
                   "simulate": {"n_events": 1000, "checks": {"enabled": True}}}},
}


def list_experiments():
    """Rows (name, experiment, claim) of the built-in presets."""
    return [(k, v["config"]["experiment"], v["claim"]) for k, v in PRESETS.items()]


# -------------------------------------------------------------------- driver
def parse_config(cfg, experiment=None):
    """Validate a whole config; returns (experiment, seed, backend spec, params)."""
    top = Section(cfg, "")
    exp = top.get("experiment", "str", choices=EXPERIMENTS)
    if experiment is not None and exp != experiment:
        raise ConfigInvalid(f"experiment: config is for {exp!r} but the subcommand is {experiment!r}")
    seed = top.get("seed", "int", check=lambda v: None if v >= 0 else "must be >= 0")
    top.get("description", "str", "")
    top.get("threads", "int", 1, check=_at_least(1))
    backend = _parse_backend(top.sub("backend"), BACKENDS_FOR[exp])
    psec = top.sub(exp, {})
    params = RUNNERS[exp][0](psec, backend)
    psec.done()
    top.done()
    return exp, seed, backend, params


def config_hash(cfg):
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _jsonable(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, complex):
        return [x.real, x.imag]
    if isinstance(x, tuple):
        return list(x)
    raise TypeError(type(x).__name__)


def run_config(cfg, out, experiment=None, threads=None):
    """Validate, run, write CSVs and the manifest.  Returns the manifest dict."""
    cfg = copy.deepcopy(cfg)
    if threads is not None:
        cfg["threads"] = int(threads)
    exp, seed, backend, params = parse_config(cfg, experiment)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    r = Run(out, seed, int(cfg.get("threads", 1)))
    t0 = time.perf_counter()
    RUNNERS[exp][1](r, backend, params)
    wall = time.perf_counter() - t0
    outputs = {}
    for fname, schema in r.outputs.items():
        rows = csvio.validate_csv(out / fname, schema)
        outputs[fname] = {"schema": schema, "rows": rows, "sha256": csvio.sha256(out / fname)}
    cfg_for_hash = {k: v for k, v in cfg.items() if k != "threads"}
    manifest = {"experiment": exp, "config": cfg, "config_sha256": config_hash(cfg_for_hash),
                "code_version": __version__, "seed": seed, "wall_time_s": wall, "outputs": outputs,
                "results": r.results}
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")
    return json.loads(json.dumps(manifest, default=_jsonable))


def _env(name, default=None):
    return os.environ.get(f"NUHFLOWS_{name}", default)


def build_parser():
    ap = argparse.ArgumentParser(prog="nuhflows", description="Run reproducible flow experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("list", help="list the built-in presets")
    sh = sub.add_parser("show", help="print the config of a preset")
    sh.add_argument("preset")
    for name in EXPERIMENTS:
        sp = sub.add_parser(name, help=f"run a {name} experiment")
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--preset", help="name of a built-in preset")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--threads", type=int, help="worker threads")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "list":
        rows = list_experiments()
        w = max(len(r[0]) for r in rows)
        for name, exp, claim in rows:
            print(f"{name:<{w}}  {exp:<9}  {claim}")
        return 0
    if args.command == "show":
        if args.preset not in PRESETS:
            print(f"error: unknown preset {args.preset!r}", file=sys.stderr)
            return 2
        print(json.dumps(PRESETS[args.preset]["config"], indent=2))
        return 0
    try:
        cfg_path = args.config or _env("CONFIG")
        preset = args.preset or _env("PRESET")
        if bool(cfg_path) == bool(preset):
            raise ConfigInvalid("give exactly one of --config and --preset")
        if preset:
            if preset not in PRESETS:
                raise ConfigInvalid(f"preset: unknown name {preset!r}")
            cfg = copy.deepcopy(PRESETS[preset]["config"])
        else:
            try:
                with open(cfg_path) as fh:
                    cfg = json.load(fh)
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigInvalid(f"config: cannot read {cfg_path}: {exc}") from None
        seed = args.seed if args.seed is not None else _env("SEED")
        if seed is not None:
            try:
                cfg["seed"] = int(seed)
            except ValueError:
                raise ConfigInvalid(f"seed: not an integer: {seed!r}") from None
        threads = args.threads if args.threads is not None else _env("THREADS")
        if threads is not None:
            try:
                threads = int(threads)
            except ValueError:
                raise ConfigInvalid(f"threads: not an integer: {threads!r}") from None
        out = args.out or _env("OUT") or f"runs/{args.command}"
        man = run_config(cfg, out, args.command, threads)
    except ConfigInvalid as exc:
        print(f"error: ConfigInvalid: {exc}", file=sys.stderr)
        return 2
    except NuhflowsError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(json.dumps({"out": str(out), "outputs": man["outputs"], "results": man["results"]}, indent=2))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
