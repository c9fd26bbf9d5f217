import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nncns import cli
from nncns.config import ModelConfig, ProblemConfig, RunConfig, SolverConfig, parse_config, serialize
from nncns.errors import ConfigError, VerdictFailure

SMALL = """
[problem]
n = 8
T = 0.02
n_t = 3
"""


def test_minimal_config_fills_defaults():
    cfg = parse_config("[problem]\nn = 16\n")
    assert cfg.problem.n == 16
    assert cfg.problem == replace(ProblemConfig(), n=16)
    assert cfg.model == ModelConfig() and cfg.solver == SolverConfig()
    assert parse_config("") == RunConfig()


def test_unknown_key_names_key_and_line():
    with pytest.raises(ConfigError) as exc:
        parse_config("[problem]\nn = 16\n\n[model]\nfamly = newtonian\n")
    assert "famly" in str(exc.value) and "line 5" in str(exc.value)


def test_unknown_section_and_bad_value():
    with pytest.raises(ConfigError, match="line 1"):
        parse_config("[nonsense]\na = 1\n")
    with pytest.raises(ConfigError, match="n_t"):
        parse_config("[problem]\nn_t = many\n")
    with pytest.raises(ConfigError, match="q must exceed d"):
        parse_config("[problem]\nq = 2\n")


finite = st.floats(0.01, 100.0, allow_nan=False)


@given(
    n=st.integers(2, 64).map(lambda k: 2 * k),
    T=finite,
    n_t=st.integers(2, 200),
    family=st.sampled_from(["newtonian", "power_law", "polynomial", "expression"]),
    mu0=finite,
    coeffs=st.lists(finite, min_size=1, max_size=4).map(tuple),
    s_max=st.one_of(st.just(math.inf), finite),
    beta=st.floats(0.01, 1.5),
    csv=st.booleans(),
    expr=st.sampled_from(["1", "(1 + s)**(-0.2)", "2 + r**2"]),
)
def test_serialize_roundtrip(n, T, n_t, family, mu0, coeffs, s_max, beta, csv, expr):
    cfg = RunConfig()
    cfg.problem = replace(cfg.problem, n=n, T=T, n_t=n_t)
    cfg.model = replace(cfg.model, family=family, mu0=mu0, mu_coeffs=coeffs, s_max=s_max, mu_expr=expr)
    cfg.solver = replace(cfg.solver, beta=beta)
    cfg.output = replace(cfg.output, csv=csv)
    back = parse_config(serialize(cfg))
    assert back == cfg and back.digest() == cfg.digest()


def test_initial_presets():
    cfg = RunConfig()
    for preset in ("rest", "trig", "random"):
        cfg.initial = replace(cfg.initial, preset=preset, amplitude=0.05)
        rho, u = cfg.initial_data()
        assert rho.shape == (32, 32) and u.shape == (2, 32, 32)
        assert np.all(rho > 0) and np.max(np.abs(u)) <= 0.05 + 1e-15


def run(tmp_path, *argv, config=SMALL):
    cfg = tmp_path / "run.ini"
    cfg.write_text(config)
    out = tmp_path / argv[0]
    code = cli.main([argv[0], "-c", str(cfg), "-o", str(out), *argv[1:]])
    return code, out


def test_simulate_rest_state(tmp_path, capsys):
    code, out = run(tmp_path, "simulate", config=SMALL + "[initial]\npreset = rest\n")
    assert code == 0
    res = (out / "residuals.csv").read_text().splitlines()[1].split(",")
    assert [float(v) for v in res] == [0.0, 0.0]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["error"] is None and all(v["passed"] for v in manifest["verdicts"])
    assert "PASS" in capsys.readouterr().out
    assert len(list((out / "trajectory").glob("rho_*.nncf"))) == 3


def test_compare_trajectory_with_itself(tmp_path):
    code, out = run(tmp_path, "simulate")
    assert code == 0
    comp = tmp_path / "cmp"
    assert cli.main(["compare", str(out), str(out / "trajectory"), "-o", str(comp)]) == 0
    rows = (comp / "compare.csv").read_text().splitlines()[1:]
    assert all(float(r.split(",")[2]) == 0.0 for r in rows)
    assert cli.main(["norms", str(out), "-o", str(tmp_path / "norms")]) == 0


def test_verify_symbol(tmp_path):
    code, out = run(tmp_path, "verify-symbol", config=SMALL + "[solver]\nn_samples = 2000\n")
    assert code == 0
    assert (out / "resolvent_bound.csv").exists() and (out / "multipliers.csv").exists()


def test_verify_ellipticity_failure_exit_code(tmp_path):
    # mu decreasing too fast makes the quadratic form indefinite
    cfg = SMALL + "[model]\nfamily = expression\nmu_expr = 1/(1 + s)**2\nlam_expr = 1\n"
    code, out = run(tmp_path, "verify-ellipticity", "--s-max", "10", "--r-max", "1", config=cfg)
    assert code == VerdictFailure.exit_code
    assert json.loads((out / "manifest.json").read_text())["command"] == "verify-ellipticity"


def test_config_error_exit_code(tmp_path):
    code, _ = run(tmp_path, "simulate", config="[problem]\nbogus = 1\n")
    assert code == 2


def test_help_lists_exit_codes(capsys):
    with pytest.raises(SystemExit):
        cli.main(["--help"])
    text = capsys.readouterr().out
    for code, _ in cli.EXIT_CODES:
        assert f"{code:>3}" in text


def test_deterministic_outputs(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    a.mkdir()
    b.mkdir()
    for where in (a, b):
        code, out = run(where, "contract", config=SMALL + "[solver]\nn_pairs = 2\nT_list = 0.02, 0.01\n")
        assert code == 0
    assert (a / "contract" / "contraction.csv").read_bytes() == (b / "contract" / "contraction.csv").read_bytes()
