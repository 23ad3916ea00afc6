import json
import subprocess
import sys

import numpy as np
import pytest

from activesusp.cli import main
from activesusp.config import ConfigError, RunConfig

SMALL = {"ensemble": {"L": 12.0, "lambda1": 0.005, "realizations": 2},
         "numerics": {"N": 96, "tol": 1e-9},
         "physics": {"kappa": 0.25, "eps_list": [0.25, 0.125]}}


def _write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def test_defaults_resolve_and_round_trip():
    cfg = RunConfig.from_dict({})
    again = RunConfig.from_json(cfg.to_json())
    assert again.to_json() == cfg.to_json() and again.digest() == cfg.digest()


@pytest.mark.parametrize("bad, where", [
    ({"ensemble": {"dd": 2}}, "ensemble.dd"),
    ({"physic": {}}, "physic"),
    ({"numerics": {"N": "64"}}, "numerics.N"),
    ({"numerics": {"N": 63}}, "numerics.N"),
    ({"ensemble": {"d": 4}}, "ensemble.d"),
    ({"force": {"gamma": 0}}, "force"),
    ({"force": {"offset": 2.5}}, "force"),
    ({"physics": {"eps_list": [0.1, 0.2]}}, "physics.eps_list"),
    ({"physics": {"h": [{"k": [1, 0, 0], "a": [1, 0, 0]}]}}, "physics.h[0]"),
    ({"physics": {"queries": [[[1, 0]]]}}, "physics.queries[0]"),
    ({"ensemble": {"lambda1": True}}, "ensemble.lambda1"),
])
def test_strict_validation_names_the_field(bad, where):
    with pytest.raises(ConfigError) as err:
        RunConfig.from_dict(bad)
    assert where in str(err.value)


def test_invalid_json_and_integers_as_floats():
    with pytest.raises(ConfigError):
        RunConfig.from_json("{'ensemble': {}}")
    cfg = RunConfig.from_dict({"ensemble": {"L": 16}})
    assert isinstance(cfg.ensemble.L, float)


def test_three_dimensional_default_forcing():
    cfg = RunConfig.from_dict({"ensemble": {"d": 3}})
    assert len(cfg.physics.h[0]["k"]) == 3


def test_config_error_exit_code(tmp_path, capsys):
    path = _write(tmp_path, {"ensemble": {"dd": 2}})
    assert main(["gen", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "ensemble.dd: unknown key" in capsys.readouterr().err


def test_dilute_command_prints_closed_form(tmp_path, capsys):
    path = _write(tmp_path, {"ensemble": {"d": 3}, "force": None,
                             "dilute": {"r": 2.0, "s": 1.0, "fmag": 1.0, "gamma": -1}})
    assert main(["dilute", "--config", str(path), "--out", str(tmp_path / "o")]) == 0
    assert "-0.734375" in capsys.readouterr().out
    rep = json.loads((tmp_path / "o" / "dilute.json").read_text())
    assert rep["closed_form_shear_scalar"] == -0.734375
    resolved = RunConfig.load(tmp_path / "o" / "config.resolved.json")
    assert resolved.force is None and resolved.dilute.r == 2.0


def test_effective_is_reproducible_and_worker_independent(tmp_path):
    path = _write(tmp_path, SMALL)
    assert main(["effective", "--config", str(path), "--out", str(tmp_path / "a")]) == 0
    assert main(["effective", "--config", str(path), "--out", str(tmp_path / "b"), "--workers", "2"]) == 0
    for name in ("effective.json", "config.resolved.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_flag_overrides_config(tmp_path):
    path = _write(tmp_path, SMALL)
    assert main(["gen", "--config", str(path), "--out", str(tmp_path / "o"), "--seed", "5"]) == 0
    assert sorted(p.name for p in (tmp_path / "o" / "ensembles").glob("*.txt")) == \
        ["ensemble_5.txt", "ensemble_6.txt"]


def test_effective_without_particles_is_identity(tmp_path):
    path = _write(tmp_path, {"ensemble": {"L": 12.0, "lambda1": 0.0, "realizations": 1},
                             "numerics": {"N": 32}})
    assert main(["effective", "--config", str(path), "--out", str(tmp_path / "o")]) == 0
    rep = json.loads((tmp_path / "o" / "effective.json").read_text())
    assert np.array_equal(np.asarray(rep["Bpas"]), np.eye(2))


def test_micro_and_macro_commands(tmp_path):
    path = _write(tmp_path, SMALL)
    out = tmp_path / "o"
    assert main(["micro", "--config", str(path), "--out", str(out)]) == 0
    assert main(["macro", "--config", str(path), "--out", str(out)]) == 0
    for name in ("micro.u.bin", "micro.iterations.csv", "macro.u.bin", "macro.json"):
        assert (out / name).exists()
    header = (out / "micro.iterations.csv").read_text().splitlines()[0]
    assert header == "iteration,increment,relative_increment,ratio"


def test_twoscale_command_writes_table(tmp_path):
    path = _write(tmp_path, dict(SMALL, physics={"eps_list": [0.25, 0.125]}))
    assert main(["twoscale", "--config", str(path), "--out", str(tmp_path / "o")]) == 0
    lines = (tmp_path / "o" / "twoscale.csv").read_text().splitlines()
    assert lines[0] == "eps,delta,kappa,seed,l2_gap,lowmode_gap,iters,ratio" and len(lines) == 3


def test_verify_passes_as_module(tmp_path):
    res = subprocess.run([sys.executable, "-m", "activesusp", "verify", "--out", str(tmp_path)],
                         capture_output=True, text=True, timeout=600)
    assert res.returncode == 0, res.stdout + res.stderr
    assert "FAIL" not in res.stdout
