import csv
import io
import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twotime import __version__
from twotime.cli import THREADS_ENV, _threads, main
from twotime.config import ConfigError, ScenarioConfig, load, parse, validate
from twotime.runner import COLUMNS

FAST = """
pipelines = ["closed_form", "heisenberg", "factorized", "binned", "unmeasured", "measured_quadrature"]
[basis]
n_max = 16
[times]
t1 = 1.0
delta = [0.0, 0.7853981633974483, 3.141592653589793]
[monte_carlo]
n = 2000
trajectory_n = 300
seed = 7
dt = 0.01
"""


def write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def read_csv(path):
    return list(csv.DictReader(open(path)))


def test_version(capsys):
    assert main(["version"]) == 0
    assert __version__ in capsys.readouterr().out


def test_defaults_validate():
    cfg = ScenarioConfig()
    assert cfg.bins.count == 8 and cfg.pointer_a.separation == 8.0
    assert load(Path(__file__).parent.parent / "configs" / "default.toml") == cfg


def test_unknown_key_reports_field_path():
    with pytest.raises(ConfigError, match="basis.colour"):
        parse("[basis]\ncolour = 3\n")


def test_non_positive_value_reports_field_path():
    with pytest.raises(ConfigError, match="pointer_a.sigma"):
        parse("[pointer_a]\nsigma = -1.0\n")


def test_syntax_error_reports_line():
    with pytest.raises(ConfigError, match="line 2"):
        parse("[basis]\nn_max = = 3\n")


def test_semantic_checks():
    with pytest.raises(ConfigError, match="T_M"):
        parse("[times]\nt1 = 0.001\n")
    with pytest.raises(ConfigError, match="outside n_max"):
        parse('[basis]\nn_max = 4\n[state]\nkind = "custom"\ncoefficients = [{m = 5, n = 0, re = 1.0}]\n')
    with pytest.raises(ConfigError, match="exactly one"):
        parse("[pointer_b]\ng = 40.0\n")
    with pytest.raises(ConfigError, match="finite"):
        parse("[times]\nt1 = inf\n")


@settings(max_examples=30, deadline=None)
@given(n_max=st.integers(2, 64), sigma=st.floats(1e-3, 1.0), count=st.integers(1, 40),
       seed=st.integers(0, 2 ** 31), delta=st.lists(st.floats(0, 10), min_size=1, max_size=5),
       kind=st.sampled_from(["entangled01", "product01", "product10"]))
def test_config_round_trip(n_max, sigma, count, seed, delta, kind):
    cfg = validate({"basis": {"n_max": n_max}, "pointer_a": {"sigma": sigma}, "bins": {"count": count},
                    "monte_carlo": {"seed": seed}, "times": {"delta": delta}, "state": {"kind": kind}})
    again = parse(cfg.to_toml())
    assert again == cfg
    assert again.digest() == cfg.digest()
    assert parse(again.to_toml()).to_toml() == cfg.to_toml()


def test_custom_state_is_normalized():
    cfg = parse('[basis]\nn_max = 4\n[state]\nkind = "custom"\n'
                'coefficients = [{m = 0, n = 1, re = 3.0}, {m = 1, n = 0, im = 4.0}]\n')
    b = cfg.build_basis()
    c = cfg.build_state(b).coeffs
    assert c[0, 1] == pytest.approx(0.6) and c[1, 0] == pytest.approx(0.8j)


def test_threads_env_and_flag(monkeypatch):
    monkeypatch.delenv(THREADS_ENV, raising=False)
    assert _threads(None) == 1
    monkeypatch.setenv(THREADS_ENV, "3")
    assert _threads(None) == 3
    assert _threads(2) == 2
    monkeypatch.setenv(THREADS_ENV, "zero")
    with pytest.raises(ConfigError):
        _threads(None)


def test_invalid_config_exit_code(tmp_path, capsys):
    assert main(["run", write(tmp_path, "[basis]\nn_max = 1\n")]) == 2
    assert "basis.n_max" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.toml")]) == 2
    assert main(["verify", write(tmp_path, "nonsense = [", "bad.toml")]) == 2


def test_bad_thread_env_is_config_error(tmp_path, monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "-2")
    assert main(["run", write(tmp_path, FAST), "--out-dir", str(tmp_path / "o")]) == 2


@pytest.fixture(scope="module")
def fast_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("run")
    cfg = write(tmp, FAST)
    assert main(["run", cfg, "--out-dir", str(tmp / "a")]) == 0
    return tmp, cfg


def test_run_writes_outputs(fast_run):
    tmp, _ = fast_run
    out = tmp / "a"
    text = (out / "twotime.csv").read_text()
    assert text.splitlines()[0] == ",".join(COLUMNS)
    rows = read_csv(out / "twotime.csv")
    assert len(rows) == 3
    for r in rows:
        assert abs(float(r["closed_form"]) - 0.5 * math.cos(float(r["delta_t"]))) < 1e-10
        assert "measured_bohm_trajectory: not requested" in r["skipped"]
        assert len(r["closed_form"].replace("-", "").replace(".", "").lstrip("0")) <= 17
    report = json.loads((out / "twotime.json").read_text())
    assert report["metadata"]["seed"] == 7
    assert len(report["metadata"]["config_hash"]) == 16
    assert "truncation_leak" in report["diagnostics"]
    assert (out / "plot_twotime.py").exists()


def test_unmeasured_and_measured_columns(fast_run):
    tmp, _ = fast_run
    rows = read_csv(tmp / "a" / "twotime.csv")
    at_pi = rows[2]
    assert float(at_pi["measured_bohm_quadrature"]) == pytest.approx(-0.5, abs=0.02)
    u, se = float(at_pi["unmeasured_bohm"]), float(at_pi["unmeasured_bohm_stderr"])
    assert abs(u - 0.5) < 4 * se


def test_same_seed_gives_identical_csv(fast_run):
    tmp, cfg = fast_run
    assert main(["run", cfg, "--out-dir", str(tmp / "b"), "--threads", "3"]) == 0
    assert (tmp / "a" / "twotime.csv").read_bytes() == (tmp / "b" / "twotime.csv").read_bytes()


def test_seed_override(fast_run):
    tmp, cfg = fast_run
    assert main(["run", cfg, "--out-dir", str(tmp / "c"), "--seed", "8"]) == 0
    report = json.loads((tmp / "c" / "twotime.json").read_text())
    assert report["metadata"]["seed"] == 8
    a = read_csv(tmp / "a" / "twotime.csv")
    c = read_csv(tmp / "c" / "twotime.csv")
    assert a[0]["closed_form"] == c[0]["closed_form"]
    assert a[0]["unmeasured_bohm"] != c[0]["unmeasured_bohm"]


def test_product_state_columns_vanish(tmp_path):
    cfg = write(tmp_path, FAST.replace("[basis]", '[state]\nkind = "product01"\n[basis]'))
    assert main(["run", cfg, "--out-dir", str(tmp_path / "p")]) == 0
    for r in read_csv(tmp_path / "p" / "twotime.csv"):
        assert abs(float(r["closed_form"])) < 1e-12
        assert abs(float(r["measured_bohm_quadrature"])) < 1e-3
        assert abs(float(r["unmeasured_bohm"])) < 4 * float(r["unmeasured_bohm_stderr"])


def test_dropout_budget_exit_code(tmp_path):
    text = """
pipelines = ["closed_form", "measured_trajectory"]
[basis]
n_max = 16
[times]
pairs = [[1.0, 2.5]]
[monte_carlo]
trajectory_n = 300
node_floor = 0.02
max_dropout = 0.0
"""
    assert main(["run", write(tmp_path, text), "--out-dir", str(tmp_path / "d")]) == 3
    rows = read_csv(tmp_path / "d" / "twotime_partial.csv")
    assert "dropout budget exceeded" in rows[0]["skipped"]
    assert json.loads((tmp_path / "d" / "twotime_partial.json").read_text())["failed"]


def test_verify_poor_separation_fails(tmp_path, capsys):
    text = FAST + "\n[pointer_a]\nseparation = 2.0\n[pointer_b]\nseparation = 2.0\n"
    assert main(["verify", write(tmp_path, text)]) == 1
    out = capsys.readouterr().out
    assert "FAIL  measurement.reconciliation" in out


def test_verify_small_basis_warns(tmp_path, capsys):
    text = FAST.replace("n_max = 16", "n_max = 4")
    main(["verify", write(tmp_path, text)])
    assert "WARNING  truncation leak" in capsys.readouterr().out
