import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from sigchar.cli import LEVY_COLUMNS, PHI_COLUMNS, TAYLOR_COLUMNS, main
from sigchar.config import ConfigError, ExperimentConfig

SMALL_SIM = {"n_paths": 3000, "steps": 40, "seed": 17}


def write_config(tmp_path, name="cfg.json", **fields):
    p = tmp_path / name
    p.write_text(json.dumps(fields))
    return p


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for name in ("levy-table", "pde-residual", "taylor", "identities", "simulate"):
        assert name in out


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "sigchar", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "levy-table" in res.stdout


def test_negative_tolerance_rejected(tmp_path, capsys):
    cfg = write_config(tmp_path, identities={"tol": -1.0})
    assert main(["identities", "--config", str(cfg)]) == 2
    assert "tol" in capsys.readouterr().err


def test_bad_json_reports_line_context(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "t_grid": [0.5,\n  "sim": {}\n}\n')
    assert main(["levy-table", "--config", str(p)]) == 2
    err = capsys.readouterr().err
    assert "bad.json:3:" in err and '"sim"' in err and "^" in err


def test_unknown_field_rejected():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"tgrid": [1.0]})


@pytest.mark.parametrize(
    "fields",
    [
        {"levy": {"Lambda": [[0, 1], [1, 0]]}},
        {"levy": {"preset": "d2", "rotation": [[1, 1], [0, 1]]}},
        {"levy": {"preset": "nope"}},
        {"t_grid": []},
        {"sim": {"n_paths": 0}},
        {"model": {"id": "bm_drift"}},
        {"stencil": {"h_t": 0.0}},
    ],
)
def test_invalid_configs(fields):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(fields)


def test_config_round_trip(tmp_path):
    cfg = ExperimentConfig.from_dict(
        {"levy": {"random_d": 4, "random_seed": 3}, "t_grid": [0.5, 1.0], "sim": SMALL_SIM, "lam": [0.0, [1.0, 2.0]]}
    )
    again = ExperimentConfig.from_json(cfg.to_json())
    assert again == cfg
    assert again.to_json() == cfg.to_json()
    A1, m1 = cfg.levy_params()
    A2, m2 = again.levy_params()
    np.testing.assert_array_equal(A1, A2)
    np.testing.assert_array_equal(m1, m2)


def test_rotation_in_config():
    M = [[0.0, 1.0], [1.0, 0.0]]
    A, mu = ExperimentConfig.from_dict({"levy": {"Lambda": [[0, -1], [1, 0]], "mu": [1.0, 0.0], "rotation": M}}).levy_params()
    np.testing.assert_allclose(mu, [0.0, 1.0])
    np.testing.assert_allclose(A, [[0, 1], [-1, 0]])


def test_levy_table_schema_and_gate(tmp_path):
    cfg = write_config(tmp_path, sim=SMALL_SIM)
    out = tmp_path / "t.csv"
    assert main(["levy-table", "--config", str(cfg), "--out", str(out)]) == 0
    rows = read_csv(out)
    assert list(rows[0]) == LEVY_COLUMNS
    assert [float(r["t"]) for r in rows] == [0.25, 0.5, 1.0]
    for r in rows:
        assert float(r["z_score"]) < 5
        assert float(r["closed_re"]) == pytest.approx(1 / np.cosh(float(r["t"]) / 2), rel=1e-14)


def test_levy_table_zero_preset(tmp_path):
    cfg = write_config(tmp_path, levy={"preset": "zero"}, sim=SMALL_SIM)
    out = tmp_path / "z.csv"
    assert main(["levy-table", "--config", str(cfg), "--out", str(out)]) == 0
    mu = np.array([0.5, -0.3])
    for r in read_csv(out):
        t = float(r["t"])
        assert float(r["closed_re"]) == pytest.approx(np.exp(-t * mu @ mu / 2), rel=1e-14)


def test_levy_table_deterministic_across_threads(tmp_path, monkeypatch):
    sim = {"n_paths": 2500, "steps": 20, "seed": 5}
    cfg = write_config(tmp_path, levy={"random_d": 3, "random_seed": 1}, sim=sim)
    outs = []
    for threads in ("1", "3"):
        out = tmp_path / f"o{threads}.csv"
        assert main(["levy-table", "--config", str(cfg), "--threads", threads, "--out", str(out)]) in (0, 1)
        outs.append(out.read_bytes())
    monkeypatch.setenv("SIGCHAR_THREADS", "2")
    out = tmp_path / "env.csv"
    main(["levy-table", "--config", str(cfg), "--out", str(out)])
    outs.append(out.read_bytes())
    assert outs[0] == outs[1] == outs[2]


def test_seed_flag_changes_output(tmp_path):
    cfg = write_config(tmp_path, sim=SMALL_SIM)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["levy-table", "--config", str(cfg), "--out", str(a)])
    main(["levy-table", "--config", str(cfg), "--seed", "18", "--out", str(b)])
    assert a.read_bytes() != b.read_bytes()


def test_pde_residual_report(tmp_path, capsys):
    cfg = write_config(tmp_path, t_grid=[0.2, 0.5, 1.0])
    out = tmp_path / "r.json"
    assert main(["pde-residual", "--config", str(cfg), "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["levy"]["max_abs_residual"] <= 1e-5
    assert 3 <= rep["refinement_ratio"] <= 5
    assert rep["general_n2"]["max_abs_residual"] <= 1e-5
    assert "max|res|" in capsys.readouterr().err


def test_taylor_outputs(tmp_path):
    cfg = write_config(tmp_path, t_grid=[1.0], taylor={"m_max": 12})
    out = tmp_path / "tay.csv"
    assert main(["taylor", "--config", str(cfg), "--out", str(out)]) == 0
    rows = read_csv(out)
    assert list(rows[0]) == TAYLOR_COLUMNS and len(rows) == 13
    last = rows[-1]
    assert float(last["partial_re"]) == pytest.approx(1 / np.cosh(0.5), abs=1e-6)
    phi = read_csv(tmp_path / "tay_phi.csv")
    assert list(phi[0]) == PHI_COLUMNS
    # degree-2 part of the Brownian expected signature is t/2 on the diagonal words
    lin = {r["word"]: float(r["coefficient"]) for r in phi if r["degree"] == "2" and r["power"] == "1"}
    assert lin == {"11": 0.5, "12": 0.0, "21": 0.0, "22": 0.5}


def test_taylor_rejects_state_dependent_model(tmp_path, capsys):
    cfg = write_config(tmp_path, model={"id": "scalar_linear", "a": 0.1, "b": 0.2}, lam=[0.0, [1.0]])
    assert main(["taylor", "--config", str(cfg)]) == 2


def test_identities_command(tmp_path):
    cfg = write_config(tmp_path, identities={"cases": 20})
    out = tmp_path / "id.txt"
    assert main(["identities", "--config", str(cfg), "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 5 and all(line.startswith("PASS") for line in lines)


def test_simulate_command(tmp_path):
    cfg = write_config(tmp_path, lam=[0.0, [0.5, -0.5]], t_grid=[1.0], sim=SMALL_SIM)
    out = tmp_path / "s.json"
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    (rec,) = json.loads(out.read_text())
    assert set(rec) == {"params", "mean_re", "mean_im", "stderr_re", "stderr_im", "n_paths", "steps", "seed"}
    z = abs(complex(rec["mean_re"], rec["mean_im"]) - np.exp(-0.25)) / np.hypot(rec["stderr_re"], rec["stderr_im"])
    assert z < 3


def test_signature_command(tmp_path):
    p = tmp_path / "path.csv"
    p.write_text("x,y\n0,0\n1,0\n1,1\n0,1\n0,0\n")
    out = tmp_path / "sig.json"
    assert main(["signature", str(p), "--depth", "2", "--out", str(out)]) == 0
    obj = json.loads(out.read_text())
    assert obj["d"] == 2 and obj["n"] == 2
    # area of the unit square: S^{12} - S^{21} = 2 * 1
    assert obj["coeffs"][4] - obj["coeffs"][5] == pytest.approx(2.0)


def test_bad_flags():
    with pytest.raises(SystemExit):
        main(["levy-table", "--threads", "0"])
    with pytest.raises(SystemExit):
        main(["levy-table", "--seed", "-3"])
