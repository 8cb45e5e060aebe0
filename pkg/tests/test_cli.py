import json
import subprocess
import sys

import numpy as np
import pytest

from nuhflows import cli, csvio
from nuhflows.errors import ConfigInvalid

SINGLE = {"variant": "lorentz-torus", "scatterers": [[0.0, 0.0, 0.25]]}
DOUBLING_GM = {"kind": "gm", "system": "doubling", "roof": {"type": "affine", "c0": 1.0, "c1": 0.5}}


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def _run(argv, capsys):
    rc = cli.main(argv)
    out, err = capsys.readouterr()
    return rc, out, err


# ----------------------------------------------------------------- presets
def test_list_contains_presets(capsys):
    """[TRIVIAL] the named presets are listed."""
    rc, out, _ = _run(["list"], capsys)
    assert rc == 0
    for name in ("lorentz-flight-tail", "beta2-decay", "variance-tlogt"):
        assert name in out
    names = [r[0] for r in cli.list_experiments()]
    assert len(names) == len(set(names)) >= 10


def test_presets_validate():
    """[TRIVIAL] every preset config passes validation."""
    for name, p in cli.PRESETS.items():
        exp, seed, _, _ = cli.parse_config(p["config"])
        assert exp in cli.EXPERIMENTS and seed >= 0, name


def test_show_preset(capsys):
    """[TRIVIAL] show prints a loadable config."""
    rc, out, _ = _run(["show", "beta2-decay"], capsys)
    assert rc == 0 and json.loads(out)["experiment"] == "correlate"
    rc, _, _ = _run(["show", "nope"], capsys)
    assert rc == 2


# ------------------------------------------------------------- determinism
def test_tail_byte_identical(tmp_path, capsys):
    """[TRIVIAL] tail on the single-disk table with seed 7, run twice."""
    cfg = {"experiment": "tail", "seed": 7, "backend": {"kind": "billiard", "table": SINGLE},
           "tail": {"n": 200_000, "n_chains": 20, "t_grid": {"geomspace": [2, 50, 20]}, "n_boot": 20}}
    path = _write(tmp_path, cfg)
    for d in ("a", "b"):
        rc, _, err = _run(["tail", "--config", path, "--out", str(tmp_path / d)], capsys)
        assert rc == 0, err
    a = (tmp_path / "a" / "tail.csv").read_bytes()
    b = (tmp_path / "b" / "tail.csv").read_bytes()
    assert a == b and len(a) > 100
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert ma["outputs"] == mb["outputs"] and ma["config_sha256"] == mb["config_sha256"]
    assert ma["outputs"]["tail.csv"]["sha256"] == csvio.sha256(tmp_path / "a" / "tail.csv")


def test_seed_override_changes_output(tmp_path, capsys):
    """[TRIVIAL] --seed overrides the config seed."""
    cfg = {"experiment": "tail", "seed": 7, "backend": {"kind": "billiard", "table": SINGLE},
           "tail": {"n": 100_000, "n_chains": 10, "t_grid": {"geomspace": [2, 50, 10]}, "n_boot": 10}}
    path = _write(tmp_path, cfg)
    _run(["tail", "--config", path, "--out", str(tmp_path / "a")], capsys)
    _run(["tail", "--config", path, "--out", str(tmp_path / "b"), "--seed", "8"], capsys)
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert mb["seed"] == 8 and ma["outputs"]["tail.csv"]["sha256"] != mb["outputs"]["tail.csv"]["sha256"]


def test_split_seed():
    """[TRIVIAL] roles get distinct, reproducible streams."""
    a = {r: cli.split_seed(5, r) for r in cli.ROLES}
    assert len(set(a.values())) == len(a)
    assert a == {r: cli.split_seed(5, r) for r in cli.ROLES}


# ------------------------------------------------------------------ errors
def test_correlate_budget_too_small(tmp_path, capsys):
    """[TRIVIAL] budget 10 surfaces BudgetTooSmall with its key path."""
    cfg = {"experiment": "correlate", "seed": 0, "backend": DOUBLING_GM,
           "correlate": {"v": "cos_bump", "t_grid": [0, 1, 2], "budget": 10}}
    rc, _, err = _run(["correlate", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "o")], capsys)
    assert rc != 0 and "BudgetTooSmall" in err and "correlate.budget" in err


@pytest.mark.parametrize("mutate, key", [
    (lambda c: c["correlate"].update(colour=1), "correlate.colour"),
    (lambda c: c["backend"].update(system="tent"), "backend.system"),
    (lambda c: c["correlate"].update(t_grid=[2, 1]), "correlate.t_grid"),
    (lambda c: c.pop("seed"), "seed"),
    (lambda c: c["backend"]["roof"].update(c1="x"), "backend.roof.c1"),
])
def test_config_invalid_names_key(tmp_path, capsys, mutate, key):
    """[TRIVIAL] validation errors exit with status 2 and name the key."""
    cfg = {"experiment": "correlate", "seed": 0, "backend": json.loads(json.dumps(DOUBLING_GM)),
           "correlate": {"v": "cos_bump", "t_grid": [0, 1, 2], "budget": 20_000}}
    mutate(cfg)
    rc, _, err = _run(["correlate", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "o")], capsys)
    assert rc == 2 and "ConfigInvalid" in err and key in err
    assert not (tmp_path / "o" / "manifest.json").exists()


def test_wrong_subcommand(tmp_path, capsys):
    """[TRIVIAL] the subcommand must match the config's experiment."""
    rc, _, err = _run(["tail", "--preset", "beta2-decay", "--out", str(tmp_path)], capsys)
    assert rc == 2 and "experiment" in err


def test_parse_config_rejects_unknown_top_level():
    """[TRIVIAL] unknown top-level keys are rejected."""
    cfg = json.loads(json.dumps(cli.PRESETS["spectral-identities"]["config"]))
    cfg["extra"] = 1
    with pytest.raises(ConfigInvalid, match="extra"):
        cli.parse_config(cfg)


def test_env_overrides(tmp_path, capsys, monkeypatch):
    """[TRIVIAL] environment variables mirror the flags."""
    monkeypatch.setenv("NUHFLOWS_PRESET", "nonmixing-resonance")
    monkeypatch.setenv("NUHFLOWS_OUT", str(tmp_path / "env"))
    monkeypatch.setenv("NUHFLOWS_SEED", "3")
    rc, _, err = _run(["defect"], capsys)
    assert rc == 0, err
    m = json.loads((tmp_path / "env" / "manifest.json").read_text())
    assert m["seed"] == 3


# --------------------------------------------------------------- experiments
def test_spectrum_preset(tmp_path, capsys):
    """[PAPER] b in [-0.2, 0.2] on doubling: 50 rows, the lambda(0) row is 1."""
    rc, _, err = _run(["spectrum", "--preset", "spectral-identities", "--out", str(tmp_path)], capsys)
    assert rc == 0, err
    assert csvio.validate_csv(tmp_path / "spectrum.csv", "spectrum") == 50
    d = csvio.read_csv(tmp_path / "spectrum.csv")
    k = np.nonzero((d["s_re"] == 0) & (d["s_im"] == 0))[0]
    assert k.size == 1
    assert abs(complex(d["lambda_re"][k[0]], d["lambda_im"][k[0]]) - 1) < 1e-8
    assert np.all(np.hypot(d["lambda_re"], d["lambda_im"]) <= 1 + 1e-8)


def test_simulate_trajectory(tmp_path, capsys):
    """[TRIVIAL] simulate writes the trajectory schema."""
    cfg = {"experiment": "simulate", "seed": 1, "backend": {"kind": "billiard", "table": SINGLE},
           "simulate": {"n_events": 500}}
    rc, _, err = _run(["simulate", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "o")], capsys)
    assert rc == 0, err
    assert csvio.validate_csv(tmp_path / "o" / "trajectory.csv", "trajectory") == 501


@pytest.mark.parametrize("exp, cfg, files", [
    ("chi", {"backend": {"kind": "two_sided", "power": 4, "roof": {"c": 1.0, "a": 0.1, "k": 0.25}},
             "chi": {"n": 500}}, ["chi.csv"]),
    ("tdf", {"backend": {"kind": "two_sided", "power": 1, "roof": {"c": 1.0, "a": 0.1, "k": 0.25}},
             "tdf": {"n": 1000}}, ["tdf.csv"]),
    ("periods", {"backend": DOUBLING_GM, "periods": {"max_length": 4, "cf": [0, 1, 2]}}, ["periods.csv"]),
    ("laplace", {"backend": DOUBLING_GM, "laplace": {"v": "cos_bump", "s": [1.0], "n_max": 5, "budget": 5000}},
     ["laplace.csv"]),
    ("variance", {"backend": DOUBLING_GM, "variance": {"v": "cos_bump", "t_grid": [0, 1, 2], "ensemble": 2000}},
     ["variance.csv"]),
    ("correlate", {"backend": {"kind": "two_sided", "power": 1, "roof": {"c": 1.0, "a": 0.1, "k": 0.25}},
                   "correlate": {"v": "fiber_cos", "t_grid": [0, 1, 2], "budget": 10_000}}, ["correlation.csv"]),
])
def test_experiments_write_valid_csv(tmp_path, capsys, exp, cfg, files):
    """[TRIVIAL] each experiment writes schema-valid CSVs recorded in the manifest."""
    cfg = dict(cfg, experiment=exp, seed=2)
    rc, _, err = _run([exp, "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "o")], capsys)
    assert rc == 0, err
    m = json.loads((tmp_path / "o" / "manifest.json").read_text())
    for f in files:
        assert m["outputs"][f]["rows"] == csvio.validate_csv(tmp_path / "o" / f, m["outputs"][f]["schema"])


def test_tdf_degenerate_recorded(tmp_path, capsys):
    """[TRIVIAL] a constant roof records a degenerate range instead of failing."""
    cfg = {"experiment": "tdf", "seed": 0,
           "backend": {"kind": "two_sided", "power": 1, "roof": {"c": 2.0, "a": 0.0, "k": 0.0}},
           "tdf": {"n": 200}}
    rc, _, err = _run(["tdf", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "o")], capsys)
    assert rc == 0, err
    assert json.loads((tmp_path / "o" / "manifest.json").read_text())["results"]["degenerate"] is True


def test_module_entry_point(tmp_path):
    """[TRIVIAL] python -m nuhflows runs the CLI."""
    p = subprocess.run([sys.executable, "-m", "nuhflows", "list"], capture_output=True, text=True)
    assert p.returncode == 0 and "beta2-decay" in p.stdout


# ---------------------------------------------------------------- csv layer
def test_csv_round_trip(tmp_path):
    """[TRIVIAL] 17 significant digits read back to the same double."""
    x = np.random.default_rng(0).normal(size=50) * 10.0 ** np.arange(-25, 25)
    csvio.write_csv(tmp_path / "t.csv", "tail", {"t": x, "survival": x, "se": x})
    assert np.array_equal(csvio.read_csv(tmp_path / "t.csv")["t"], x)


def test_csv_schema_errors(tmp_path):
    """[TRIVIAL] missing columns and malformed files are rejected."""
    with pytest.raises(csvio.SchemaError):
        csvio.write_csv(tmp_path / "t.csv", "tail", {"t": [1.0], "survival": [1.0]})
    (tmp_path / "bad.csv").write_text("t,survival,se\n1,x,2\n")
    with pytest.raises(csvio.SchemaError):
        csvio.validate_csv(tmp_path / "bad.csv", "tail")
