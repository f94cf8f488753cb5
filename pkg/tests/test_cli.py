import json
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from hubbard_tpm import cli, experiment, workstats
from hubbard_tpm.cli import ConfigError, RunConfig, main


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def _all_files(root):
    return {os.path.relpath(os.path.join(d, f), root) for d, _, fs in os.walk(root) for f in fs}


def test_flat_and_json_round_trip():
    cfg = RunConfig(L=6, U=2.5, tau=0.5, dt=0.01, scheme="rk4", U_values=(0.0, 0.5), densify=True, workers=3)
    assert RunConfig.from_mapping(cli.parse_flat(cfg.to_flat())) == cfg
    assert RunConfig.from_mapping(json.loads(cfg.to_json())) == cfg
    default = RunConfig()
    assert RunConfig.from_mapping(cli.parse_flat(default.to_flat())) == default


@settings(max_examples=40, deadline=None)
@given(L=st.sampled_from([2, 4, 6, 8]), U=st.floats(0, 20, allow_nan=False), tau=st.floats(0, 100),
       beta=st.floats(0.01, 5), dt=st.none() | st.floats(1e-4, 1.0),
       us=st.lists(st.floats(0, 12), min_size=1, max_size=5), workers=st.integers(1, 8))
def test_round_trip_property(L, U, tau, beta, dt, us, workers):
    cfg = RunConfig(L=L, U=U, tau=tau, beta=beta, dt=dt, U_values=tuple(us), workers=workers)
    flat = RunConfig.from_mapping(cli.parse_flat(cfg.to_flat()))
    assert flat == cfg
    assert RunConfig.from_mapping(json.loads(flat.to_json())) == cfg


def test_validation_errors():
    with pytest.raises(ConfigError):
        RunConfig.from_mapping({"bogus": 1})
    with pytest.raises(ConfigError):
        RunConfig.from_mapping({"L": "2.5"})
    for bad in ({"L": 5}, {"U": -1}, {"beta": 0}, {"scheme": "euler"}, {"workers": 0}, {"A": -1},
                {"L_values": "4,5"}, {"tol_observable": 0}):
        with pytest.raises(ConfigError):
            RunConfig.from_mapping(bad).validate()


def test_flags_override_config_file(workdir):
    (workdir / "run.cfg").write_text("L = 2\nU = 3.0  # comment\ntau = 1\n")
    ns = cli.build_parser().parse_args(["single", "--config", "run.cfg", "--U", "5"])
    cfg = cli.resolve_config(ns)
    assert (cfg.L, cfg.U, cfg.tau) == (2, 5.0, 1.0)
    (workdir / "run.json").write_text(json.dumps({"L": 4, "tau": 2.0}))
    cfg = cli.resolve_config(cli.build_parser().parse_args(["single", "--config", "run.json"]))
    assert (cfg.L, cfg.tau) == (4, 2.0)


def test_config_errors_exit_2(workdir, capsys):
    assert main(["single", "--L", "3"]) == cli.EXIT_CONFIG
    assert "L must be" in capsys.readouterr().err
    (workdir / "bad.json").write_text("{not json")
    assert main(["single", "--config", "bad.json"]) == cli.EXIT_CONFIG
    assert main(["single", "--config", "missing.cfg"]) == cli.EXIT_CONFIG


def test_single_dimer_sudden_quench(workdir, capsys):
    assert main(["single", "--L", "2", "--U", "0", "--tau", "0", "--out", "out", "--dump-config"]) == 0
    text = capsys.readouterr().out
    assert text.startswith("# energies in J")
    rec = json.loads((workdir / "out" / "L2_U0_tau0" / "record.json").read_text())
    ref = oracles.full_chain(2, 0.0, 0.0)
    assert np.isclose(rec["record"]["mean_work"], ref["mean"], atol=1e-10)
    assert np.isclose(rec["record"]["variance"], ref["var"], atol=1e-10)
    assert np.isclose(rec["record"]["skew3"], ref["skew"], atol=1e-9)
    assert np.isclose(rec["record"]["sigma"], ref["sigma"], atol=1e-9)
    assert rec["units"] == experiment.UNITS
    cfg = RunConfig.from_mapping(json.loads((workdir / "out" / "L2_U0_tau0" / "config.json").read_text()))
    assert cfg.L == 2


def test_single_without_drive(workdir, capsys):
    assert main(["single", "--L", "4", "--U", "2", "--tau", "1", "--A", "0", "--out", "out"]) == 0
    rec = json.loads((workdir / "out" / "L4_U2_tau1_A0" / "record.json").read_text())["record"]
    for k in ("mean_work", "variance", "skew3", "delta_F", "sigma", "d_eq"):
        assert abs(rec[k]) < 1e-9, k


def test_single_mott_point_reverses_fdr(workdir, capsys):
    assert main(["single", "--L", "4", "--U", "10", "--tau", "10", "--out", "out"]) == 0
    rec = json.loads((workdir / "out" / "L4_U10_tau10" / "record.json").read_text())["record"]
    assert rec["fdr_ratio"] > 1


def test_jarzynski_failure_exits_1(workdir, capsys, monkeypatch):
    monkeypatch.setattr(workstats, "jarzynski_residual", lambda *a: 1e-3)
    assert main(["single", "--L", "2", "--tau", "1", "--out", "out"]) == cli.EXIT_INVARIANT
    assert "Jarzynski" in capsys.readouterr().err


def test_writes_stay_inside_output_directory(workdir, capsys):
    assert main(["dist", "--L", "2", "--U", "1", "--tau", "1", "--out", "out"]) == 0
    assert main(["sweep", "--L_values", "2", "--U_values", "0,2,4", "--tau_values", "0,1", "--out", "out"]) == 0
    assert main(["heatmap", "--quantity", "skew3", "--L", "2", "--out", "out", "--svg"]) == 0
    files = _all_files(workdir)
    assert files and all(f.startswith("out" + os.sep) for f in files)
    assert {"out/records.csv", "out/manifest.json", "out/heatmap_skew3_L2.csv", "out/heatmap_skew3_L2.svg",
            "out/dist_L2_U1_tau1.csv"} <= {f.replace(os.sep, "/") for f in files}
    assert main(["heatmap", "--L", "2", "--out", "out", "--sweep-dir", "/tmp"]) == cli.EXIT_CONFIG
    summary = capsys.readouterr().out
    assert "L=2 tau=1" in summary


def test_csv_dialect(workdir, capsys):
    assert main(["dist", "--L", "2", "--U", "1", "--tau", "1", "--out", "out"]) == 0
    raw = (workdir / "out" / "dist_L2_U1_tau1.csv").read_bytes()
    assert b"\r" not in raw
    lines = raw.decode().splitlines()
    assert lines[0].startswith("# ") and lines[1] == "W,P"
    assert abs(sum(float(l.split(",")[1]) for l in lines[2:]) - 1) < 1e-12


def test_heatmap_without_sweep_is_a_config_error(workdir):
    assert main(["heatmap", "--out", "empty"]) == cli.EXIT_CONFIG


def test_partial_sweep_exits_3(workdir, capsys, monkeypatch):
    real = experiment.run_point

    def flaky(params, *args, **kwargs):
        if params.U == 2.0:
            raise RuntimeError("boom")
        return real(params, *args, **kwargs)

    monkeypatch.setattr(experiment, "run_point", flaky)
    code = main(["sweep", "--L_values", "2", "--U_values", "0,2,4", "--tau_values", "1", "--out", "out"])
    assert code == cli.EXIT_PARTIAL
    assert main(["heatmap", "--L", "2", "--out", "out"]) == cli.EXIT_PARTIAL


def test_check_quick(capsys):
    assert main(["check", "quick"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("ok ") >= 5


def test_check_reports_first_failure(capsys, monkeypatch):
    monkeypatch.setattr(cli, "_dimer_levels", lambda U, J=1.0: np.zeros(4))
    assert main(["check"]) == cli.EXIT_INVARIANT
    assert "FAIL  dimer spectrum" in capsys.readouterr().out
