import json
import math
import subprocess
import sys
from pathlib import Path

import pytest

from qtur import cli, thermo

DATA = Path(__file__).parent / "data"
CONFIGS = Path(__file__).parent.parent / "configs"


def write_config(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def analytic(sweep=(), **params):
    base = {"omega0": 1.0, "T_c": 0.2, "T_h": 2.0, "tau": 100.0, "Gamma": 1.0}
    base.update(params)
    return {"engine": {"kind": "oscillator-analytic", "params": base}, "sweep": list(sweep)}


def read_csv(path):
    lines = path.read_text().splitlines()
    header = lines[1].split(",")
    return lines, [dict(zip(header, row.split(","))) for row in lines[2:]]


# ---------------------------------------------------------------- config handling


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.json")))
def test_committed_configs_validate(name):
    cfg = cli.load_config(CONFIGS / name)
    assert cli.sweep_points(cfg)


def test_defaults_filled():
    cfg = cli.resolve_config({"engine": {"kind": "oscillator-analytic"}})
    assert cfg["engine"]["params"]["Gamma"] == 1.0
    assert cfg["numerics"]["nodes"] == 257
    assert cli.sweep_points(cfg) == [{}]


@pytest.mark.parametrize(
    "raw",
    [
        {},
        {"engine": {"kind": "steam"}},
        {"engine": {"kind": "oscillator-analytic", "params": {"Gamma": -1}}},
        {"engine": {"kind": "oscillator-analytic"}, "sweep": [{"parameter": "bogus", "values": [1]}]},
        {"engine": {"kind": "oscillator-analytic"}, "sweep": [{"parameter": "Gamma", "values": []}]},
        {"engine": {"kind": "oscillator-analytic"}, "sweep": [{"parameter": "Gamma"}]},
        {"engine": {"kind": "oscillator-analytic"}, "numerics": {"rtol": 0}},
        {"engine": {"kind": "oscillator-analytic"}, "sweep": [
            {"parameter": "Gamma", "values": [1]}, {"parameter": "t_eq", "values": [1]}]},
        {"engine": {"kind": "oscillator-analytic"}, "sweep": [
            {"parameter": "Gamma", "log_range": {"start": 0, "stop": 1, "num": 3}}]},
        {"engine": {"kind": "custom-detailed-balanced"}},
    ],
)
def test_invalid_configs_rejected(raw):
    with pytest.raises(cli.ConfigError):
        cli.resolve_config(raw)


def test_sweep_grid_order_and_ranges():
    cfg = cli.resolve_config(analytic([
        {"parameter": "Gamma", "log_range": {"start": 0.1, "stop": 10, "num": 3}},
        {"parameter": "T_c", "linear_range": {"start": 0.2, "stop": 0.4, "num": 2}},
    ]))
    pts = cli.sweep_points(cfg)
    assert [p["Gamma"] for p in pts] == pytest.approx([0.1, 0.1, 1, 1, 10, 10])
    assert [p["T_c"] for p in pts] == pytest.approx([0.2, 0.4] * 3)


@pytest.mark.parametrize(
    "v, text",
    [(0.1, "0.10000000000000001"), (True, "true"), (False, "false"), (3, "3"), (math.nan, "nan"), (None, "")],
)
def test_number_formatting(v, text):
    assert cli.format_value(v) == text


# ---------------------------------------------------------------- run


def test_single_point_writes_one_row_and_golden_header(tmp_path):
    out = tmp_path / "one.csv"
    assert cli.main(["run", "--config", str(write_config(tmp_path, analytic())), "--out", str(out)]) == 0
    lines, rows = read_csv(out)
    assert "\n".join(lines[:2]) + "\n" == (DATA / "csv_header_oscillator.txt").read_text()
    assert len(rows) == 1
    assert float(rows[0]["P_w"]) == pytest.approx(0.013592620697010737, rel=1e-8)
    sidecar = json.loads(out.with_suffix(".json").read_text())
    assert sidecar["schema"] == cli.SCHEMA_VERSION and sidecar["rows"] == 1 and sidecar["violations"] == []


def test_custom_header_golden(tmp_path):
    assert cli.csv_header("custom-detailed-balanced") == (DATA / "csv_header_custom.txt").read_text().splitlines()[1].split(",")


def test_fig1b_style_sweep_columns(tmp_path):
    cfg = analytic([{"parameter": "Gamma", "log_range": {"start": 0.05, "stop": 50, "num": 5}}])
    out = tmp_path / "b.csv"
    code = cli.run(cli.resolve_config(cfg), out, jobs=1)
    assert code == 0
    _, rows = read_csv(out)
    assert len(rows) == 5
    for col in ("t_eq", "P_w", "P_W", "DeltaP_w", "DeltaI_w", "sigma_dot", "eta", "eta_C", "eta_PS",
                "eta_Q", "f_value", "tur_residual", "engine_flag", "ratio_2dIw_over_dPw"):
        assert col in rows[0]
    assert float(rows[-1]["t_eq"]) == pytest.approx(1 / 50)


def test_run_is_byte_identical_across_repeats_and_workers(tmp_path):
    cfg = analytic([{"parameter": "Gamma", "values": [0.5, 2.0, 8.0]}])
    path = write_config(tmp_path, cfg)
    outs = []
    for k, jobs in enumerate(("1", "1", "2")):
        out = tmp_path / f"r{k}.csv"
        assert cli.main(["run", "--config", str(path), "--out", str(out), "--jobs", jobs]) == 0
        outs.append((out.read_bytes(), out.with_suffix(".json").read_bytes()))
    assert outs[0] == outs[1] == outs[2]


def test_custom_engine_run(tmp_path):
    cfg = json.loads((CONFIGS / "custom_qutrit.json").read_text())
    cfg["sweep"][0]["values"] = [1.0]
    cfg["numerics"] = {"nodes": 65, "rtol": 1e-6}
    out = tmp_path / "q.csv"
    assert cli.run(cli.resolve_config(cfg), out, jobs=1) == 0
    _, rows = read_csv(out)
    row = rows[0]
    assert float(row["J_q"]) == pytest.approx(float(row["J_q_direct"]), rel=1e-8)
    assert row["fd_derivatives"] == "false"


def test_matrix_engine_pinned_dimension(tmp_path):
    cfg = analytic(T_c=0.15, T_h=0.3, Gamma=2.0)
    cfg["engine"]["kind"] = "oscillator-matrix"
    cfg["numerics"] = {"fock_dim": 40, "nodes": 65, "rtol": 1e-6}
    out = tmp_path / "m.csv"
    assert cli.run(cli.resolve_config(cfg), out, jobs=1) == 0
    _, rows = read_csv(out)
    assert rows[0]["fock_dim"] == "40"


def test_bad_config_exit_code(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{ not json")
    assert cli.main(["run", "--config", str(bad)]) == cli.EXIT_CONFIG
    assert cli.main(["run", "--config", str(tmp_path / "missing.json")]) == cli.EXIT_CONFIG
    # T_c above T_h is a parameter-domain error of the configuration
    path = write_config(tmp_path, analytic(T_c=3.0), "hot.json")
    assert cli.main(["run", "--config", str(path), "--out", str(tmp_path / "x.csv")]) == cli.EXIT_CONFIG


def test_nonconvergence_exit_code(tmp_path):
    cfg = analytic(Gamma=0.05, tau=1e7)
    cfg["numerics"] = {"quad_tol": 1e-15}
    path = write_config(tmp_path, cfg)
    out = tmp_path / "nc.csv"
    assert cli.main(["run", "--config", str(path), "--out", str(out)]) == cli.EXIT_CONVERGENCE
    sidecar = json.loads(out.with_suffix(".json").read_text())
    assert sidecar["violations"][0]["kind"] == "convergence"


def test_invariant_violation_exit_code(tmp_path, monkeypatch):
    real = cli.evaluate_point

    def broken(cfg, point):
        inputs, rep = real(cfg, point)
        return inputs, thermo.assemble_report(
            T_c=rep.T_c, T_h=rep.T_h, tau=rep.tau, W=rep.W_ad, cross=rep.hd_phi,
            sigma_dot=-rep.sigma_dot, DeltaP_w=rep.DeltaP_w, DeltaI_w=rep.DeltaI_w, energy_scale=1.0,
        )

    monkeypatch.setattr(cli, "evaluate_point", broken)
    out = tmp_path / "v.csv"
    assert cli.run(cli.resolve_config(analytic()), out, jobs=1) == cli.EXIT_INVARIANT
    sidecar = json.loads(out.with_suffix(".json").read_text())
    assert any("entropy" in v["violation"] for v in sidecar["violations"])


def test_check_invariants_passes_clean_row():
    rep = thermo.assemble_report(
        T_c=0.5, T_h=2.0, tau=10.0, W=-1.0, cross=0.02, sigma_dot=0.1, DeltaP_w=0.3, DeltaI_w=0.05, energy_scale=1.0
    )
    assert cli.check_invariants(rep.as_dict()) == []


# ---------------------------------------------------------------- info and verify


def test_info_prints_resolved_points(tmp_path, capsys):
    path = write_config(tmp_path, analytic([{"parameter": "T_c", "values": [0.2, 0.4]}]))
    assert cli.main(["info", "--config", str(path)]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["points"] == [{"T_c": 0.2}, {"T_c": 0.4}]
    assert info["numerics"]["rtol"] == 1e-7


def test_verify_count_plumbing(capsys):
    assert cli.main(["verify", "--suite", "inner-product", "--count", "100", "--seed", "3"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["suites"]["inner-product"]["count"] == 100


def test_verify_tur_evaluates_exact_count():
    code, report = cli.verify("tur", seed=5, count=4)
    assert code == 0 and report["suites"]["tur"]["count"] == 4


def test_verify_injected_violation_fails(tmp_path, capsys):
    out = tmp_path / "verify.json"
    code = cli.main(["verify", "--suite", "detailed-balance", "--count", "4", "--inject-violation", "--out", str(out)])
    assert code == cli.EXIT_VERIFY_FAILED
    report = json.loads(out.read_text())
    failures = report["suites"]["detailed-balance"]["failures"]
    assert len(failures) == 1
    assert failures[0]["inputs"]["residual"] > 1e-3


def test_verify_rejects_nonpositive_count():
    assert cli.main(["verify", "--count", "0"]) == cli.EXIT_CONFIG


def test_console_script_entry_point(tmp_path):
    path = write_config(tmp_path, analytic())
    out = tmp_path / "s.csv"
    proc = subprocess.run(
        [sys.executable, "-m", "qtur.cli", "run", "--config", str(path), "--out", str(out)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert out.exists()
