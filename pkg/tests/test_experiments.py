from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poresim import DensityField, RadialGrid, derive_profile
from poresim.cli import main
from poresim.experiments import (
    SCENARIOS,
    ExperimentConfig,
    build_perturbation,
    load_config,
    run_scenario,
    second_derivative_envelope,
    weighted_profile_ratio,
)
from poresim.profiles import PowerLawProfile, shifted_moment


@pytest.mark.parametrize(
    "kw, msg",
    [
        ({"scenario": "nope"}, "unknown scenario"),
        ({"gamma": 0.5}, "0 < gamma < 1/2"),
        ({"epsilon": 3.0}, "(1-gamma)/gamma"),
        ({"scenario": "parabolic-stability", "epsilon": 2.5}, "1/(2 gamma)"),
        ({"c0": 2.0}, "c0"),
        ({"tau0": -1.0}, "tau0"),
        ({"dt_rel": 0.5}, "dt_rel"),
        ({"rplus_over_r0": 2.0}, "rplus/r0"),
    ],
)
def test_config_rejects_hypothesis_violations(kw, msg):
    with pytest.raises(ValueError, match=msg.replace("(", r"\(").replace(")", r"\)")):
        ExperimentConfig(**kw)


def test_config_defaults():
    cfg = ExperimentConfig()
    assert cfg.t0 == pytest.approx(100.0)
    assert cfg.span == 10.0 and cfg.step == 0.002
    assert ExperimentConfig(scenario="xy-lemma").span == 30.0
    assert ExperimentConfig(scenario="parabolic-stability").step == 0.01
    assert str(ExperimentConfig(scenario="xy-lemma").out_dir) == "runs/xy-lemma"


def test_load_config_with_file_and_overrides(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[model]\ngamma = 0.2\nbeta = 2\n[numerics]\ntau_span = none\nn_cells = 500\n")
    cfg = load_config(ini, {"model.beta": "4", "seed": "3"}, scenario="xy-lemma")
    assert cfg.gamma == 0.2 and cfg.beta == 4.0 and cfg.seed == 3
    assert cfg.tau_span is None and cfg.n_cells == 500
    assert cfg.scenario == "xy-lemma"
    with pytest.raises(KeyError):
        load_config(None, {"unknown_key": "1"})


def test_zero_amplitude_gives_zero_perturbation():
    pert = build_perturbation(ExperimentConfig(c0=0.0))
    y = np.linspace(0, 50, 11)
    assert np.all(pert.G0(y) == 0.0) and np.all(pert.Ghat0(y) == 0.0)


def test_unmodulated_perturbation_values():
    pert = build_perturbation(ExperimentConfig(c0=0.01, gamma=0.25, epsilon=1.0, modulation="none"))
    assert float(pert.G0(0.0)) == pytest.approx(0.01, rel=1e-14)
    assert float(pert.G0(4.0)) == pytest.approx(0.000625, rel=1e-14)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 2.5))
def test_perturbation_respects_envelopes(seed, eps):
    cfg = ExperimentConfig(seed=seed, epsilon=eps)
    pert = build_perturbation(cfg)
    assert abs(pert.phase) <= math.pi / 4
    theta = derive_profile(cfg.params).theta
    y = np.geomspace(1e-3, 1e4, 200)
    assert np.all(np.abs(pert.G0(y)) <= cfg.c0 * (1 + cfg.gamma * y) ** (-theta - eps) * (1 + 1e-12))
    env = np.exp((2 - eps * cfg.gamma) * cfg.tau0 - y * cfg.t0 / 2)
    assert np.all(np.abs(pert.Ghat0(y)) <= env * (1 + 1e-12))
    g = cfg.gamma
    bound = cfg.c0 / (g * g * (theta - 2) * (theta - 1)) + 4 * math.exp(-eps * g * cfg.tau0)
    assert abs(float(shifted_moment(pert.data, 0.0))) <= bound


def test_perturbation_is_seeded():
    a = build_perturbation(ExperimentConfig(seed=5))
    b = build_perturbation(ExperimentConfig(seed=5))
    c = build_perturbation(ExperimentConfig(seed=6))
    assert a.phase == b.phase != c.phase


def test_second_derivative_gate():
    big = PowerLawProfile(1.0, 0.25, 4.0, kappa=20.0)
    assert second_derivative_envelope(big, 0.25) > 1.0
    ok = build_perturbation(ExperimentConfig(scenario="parabolic-stability"))
    assert second_derivative_envelope(ok.G0, 0.25) <= 0.01
    with pytest.raises(ValueError, match="envelope"):
        build_perturbation(ExperimentConfig(scenario="parabolic-stability", kappa=40.0,
                                            modulation_amplitude=1.0))


def test_weighted_ratio_vanishes_on_reference_state():
    cfg = ExperimentConfig()
    prof = derive_profile(cfg.params)
    tau = 3.0
    grid = RadialGrid.stretched(20.0, 400, 0.001)
    y = grid.centers
    F = prof(y) + cfg.mu * np.exp(1.5 * tau - y * math.exp(tau))
    field = DensityField(grid, F, "selfsim", tau, signed=True)
    assert weighted_profile_ratio(field, cfg.params) < 1e-12


def test_audit_scenario_outputs(tmp_path):
    rep = run_scenario(ExperimentConfig(scenario="selfsimilar-audit", out=str(tmp_path)))
    assert rep["passed"] and rep["criteria"]["1"]["pass"]
    assert rep["metrics"]["N_s"] == pytest.approx(2.0)
    saved = json.loads((tmp_path / "report.json").read_text())
    assert saved["status"] == "ok" and "out" not in saved["config"]
    assert list((tmp_path / "profiles").glob("tau=*.csv"))


def test_xy_scenario_outputs(tmp_path):
    rep = run_scenario(ExperimentConfig(scenario="xy-lemma", out=str(tmp_path)))
    assert rep["criteria"]["4"]["pass"]
    rates = json.loads((tmp_path / "rates.json").read_text())
    assert rates["N"]["fitted_rate"] == pytest.approx(0.2, rel=0.05)
    assert (tmp_path / "moments.csv").read_text().splitlines()[1] == "tau,X,Y,N"


def test_aborted_run_is_flagged(tmp_path, monkeypatch):
    import poresim.experiments as ex

    def boom(cfg, out):
        raise FloatingPointError("solver broke")

    monkeypatch.setitem(ex.RUNNERS, "xy-lemma", boom)
    with pytest.raises(FloatingPointError):
        run_scenario(ExperimentConfig(scenario="xy-lemma", out=str(tmp_path)))
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["status"] == "aborted" and "solver broke" in rep["error"]


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["audit", "--out", str(tmp_path / "a")]) == 0
    assert "criterion 1 PASS" in capsys.readouterr().out
    assert main(["xy", "--out", str(tmp_path / "b"), "--set", "gamma=0.7"]) == 1
    assert "ABORTED" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["xy", "--set", "gamma"])


def test_cli_config_file_and_seed(tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("[run]\ntau_span = 40\n")
    assert main(["xy", "--config", str(ini), "--seed", "4", "--out", str(tmp_path / "o")]) == 0
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["seed"] == 4 and rep["config"]["tau_span"] == 40.0


def test_identical_seeds_give_identical_files(tmp_path):
    for name in ("r1", "r2"):
        run_scenario(ExperimentConfig(scenario="volterra-vs-sim", seed=11, out=str(tmp_path / name)))
    files = sorted(p.relative_to(tmp_path / "r1") for p in (tmp_path / "r1").rglob("*") if p.is_file())
    assert files
    for rel in files:
        assert (tmp_path / "r1" / rel).read_bytes() == (tmp_path / "r2" / rel).read_bytes()


def test_scenario_list_is_complete():
    from poresim.experiments import RUNNERS

    assert set(RUNNERS) == set(SCENARIOS)
