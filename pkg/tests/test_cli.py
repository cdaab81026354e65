import json

import numpy as np
import pytest

from superbunch import cli
from superbunch.chain import PulseRecords, UndefinedEstimatorError

SUBCOMMANDS = ["hbt", "scan-angle", "scan-wavelength", "histogram", "calibrate", "gain-fit", "modes"]


def run(tmp_path, *argv, name="out"):
    out = tmp_path / name
    code = cli.dispatch([*argv, "--out", str(out)])
    return code, out


def summary(out):
    return json.loads((out / "summary.json").read_text())


def test_hbt_superbunching(tmp_path, capsys):
    code, out = run(tmp_path, "hbt", "--kind", "squeezed", "--mean", "100", "--pulses", "1000000",
                    "--seed", "7")
    assert code == 0
    s = summary(out)
    assert abs(s["g2"] - 3.01) < 3 * s["std_error"]
    assert "g2 =" in capsys.readouterr().out
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "hbt" and manifest["seed"] == 7
    assert manifest["schema_version"] == 1 and "duration_s" in manifest and "version" in manifest


def test_calibrate(tmp_path):
    code, out = run(tmp_path, "calibrate", "--mean", "8000", "--pulses", "1000000", "--seed", "1")
    assert code == 0
    assert abs(summary(out)["g2"] - 1.0) < 0.005
    assert (out / "calibration.csv").read_text().startswith("mean_photons,pulses,g2")


def test_nonpositive_mean_is_usage_error(tmp_path, capsys):
    code, _ = run(tmp_path, "hbt", "--kind", "thermal", "--mean", "0")
    assert code == 2
    assert "mean must be positive" in capsys.readouterr().err


def test_unknown_flag(tmp_path, capsys):
    code, _ = run(tmp_path, "hbt", "--bogus")
    assert code == 2
    assert "usage" in capsys.readouterr().err


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_every_subcommand_has_common_flags(cmd):
    parser = cli.build_parser()
    sub = parser._subparsers._group_actions[0].choices[cmd]
    flags = {opt for a in sub._actions for opt in a.option_strings}
    assert {"--pulses", "--seed", "--out", "--m", "--config"} <= flags


@pytest.mark.parametrize("argv", [
    ["hbt", "--kind", "thermal", "--mean", "50", "--pulses", "20000"],
    ["scan-angle", "--pulses", "2000", "--n-points", "9"],
    ["scan-wavelength", "--pulses", "2000", "--n-points", "9"],
    ["histogram", "--kind", "squeezed", "--pulses", "20000"],
    ["histogram", "--kind", "vacuum", "--pulses", "20000"],
    ["calibrate", "--pulses", "20000"],
    ["gain-fit"],
    ["modes", "--pulses", "20000"],
])
def test_outputs_reproducible_across_workers(tmp_path, argv):
    c1, a = run(tmp_path, *argv, "--seed", "3", name="a")
    c2, b = run(tmp_path, *argv, "--seed", "3", "--workers", "2", name="b")
    assert c1 == c2 == 0
    csvs = sorted(p.name for p in a.glob("*.csv"))
    assert csvs
    for name in csvs:
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_manifest_replay(tmp_path):
    code, a = run(tmp_path, "hbt", "--kind", "squeezed", "--mean", "30", "--pulses", "30000",
                  "--seed", "9", "--m", "1.25", name="a")
    assert code == 0
    code, b = run(tmp_path, "hbt", "--config", str(a / "manifest.json"), name="b")
    assert code == 0
    assert (a / "hbt.csv").read_bytes() == (b / "hbt.csv").read_bytes()


def test_config_precedence(tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("mean: 40\nkind: squeezed\npulses: 5000\n")
    code, out = run(tmp_path, "hbt", "--config", str(cfg), "--mean", "60")
    assert code == 0
    row = (out / "hbt.csv").read_text().splitlines()[1].split(",")
    assert row[0] == "squeezed" and float(row[1]) == 60.0 and int(row[3]) == 5000


def test_config_unknown_key(tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("nonsense: 1\n")
    code, _ = run(tmp_path, "hbt", "--config", str(cfg))
    assert code == 2


def test_numerical_failure_exit_code(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise UndefinedEstimatorError("mean signal is zero")
    monkeypatch.setattr(cli, "estimate_g2", boom)
    code, _ = run(tmp_path, "hbt", "--pulses", "1000")
    assert code == 3


def test_records_binary(tmp_path):
    code, out = run(tmp_path, "hbt", "--pulses", "1000", "--records", "bin")
    assert code == 0
    rec = PulseRecords.from_bytes((out / "records.bin").read_bytes())
    assert len(rec) == 1000


def test_records_csv(tmp_path):
    code, out = run(tmp_path, "hbt", "--pulses", "100", "--records", "csv")
    assert code == 0
    lines = (out / "records.csv").read_text().splitlines()
    assert lines[0] == "pulse_index,s1_nvs,s2_nvs" and len(lines) == 101


def test_scan_outputs(tmp_path):
    code, out = run(tmp_path, "scan-angle", "--pulses", "50000", "--seed", "2")
    assert code == 0
    s = summary(out)
    assert abs(s["fit"]["fwhm"] - 4.1) < 0.3
    rows = (out / "scan_angle.csv").read_text().splitlines()
    assert rows[0] == "index,angle_mrad,overlap,g2,std_error,model_g2" and len(rows) == 22


def test_histogram_multimode_rejected(tmp_path):
    code, _ = run(tmp_path, "histogram", "--m", "1.25", "--pulses", "1000")
    assert code == 2


def test_gain_fit_from_file(tmp_path):
    p = np.linspace(5, 75, 10)
    s = 2.0 * np.sinh(14.0 * np.sqrt(p / 75)) ** 2
    data = tmp_path / "gain.csv"
    data.write_text("power_mw,signal\n" + "\n".join(f"{a!r},{b!r}" for a, b in zip(p.tolist(), s.tolist())) + "\n")
    code, out = run(tmp_path, "gain-fit", "--data", str(data))
    assert code == 0
    fit = summary(out)["fit"]
    assert fit["gamma_max"] == pytest.approx(14.0, rel=1e-8)


def test_modes_summary(tmp_path):
    code, out = run(tmp_path, "modes", "--pulses", "200000", "--seed", "4")
    assert code == 0
    s = summary(out)
    assert s["geometry_m"] == 1.0
    assert s["composition_m"] == pytest.approx(1.25, rel=1e-12)
    assert abs(s["g2"] - 1.8) < 3 * s["std_error"]
