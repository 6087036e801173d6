import json
import subprocess
import sys

import pytest

import relaysim.schedule
from relaysim.cli import ConfigError, main, parse_rational, parse_snr_grid

CONFIG = """
defaults:
  N: 1
  r: "1/6"
  trials: 3000
  seed: 17
runs:
  - name: sp
    mode: outage
    protocol: superposition
    L: 2
    snr_db: "5:5:15"
    out: {out}
"""


def body(text):
    return [l for l in text.splitlines() if not l.startswith("# generated")]


def test_grid_and_rational_parsing():
    assert parse_snr_grid("10:2.5:20") == (10, 12.5, 15, 17.5, 20)
    assert parse_snr_grid("1,4,9") == (1, 4, 9)
    assert parse_rational("1/6") == pytest.approx(1 / 6)


def test_outage_from_config(tmp_path):
    out = tmp_path / "sp.csv"
    cfg = tmp_path / "exp.yaml"
    cfg.write_text(CONFIG.format(out=out))
    assert main(["outage", "--config", str(cfg), "--sidecar"]) == 0
    first = out.read_text()
    assert "# protocol: superposition" in first
    rows = [l for l in first.splitlines() if not l.startswith("#")]
    assert rows[0] == "snr_db,estimate,ci_low,ci_high,trials,events" and len(rows) == 4
    assert json.loads((tmp_path / "sp.csv.json").read_text())["config"]["seed"] == 17
    assert main(["outage", "--config", str(cfg)]) == 0
    assert body(out.read_text()) == body(first)


def test_flags_match_config(tmp_path, capsys):
    out = tmp_path / "a.csv"
    cfg = tmp_path / "exp.yaml"
    cfg.write_text(CONFIG.format(out=out))
    main(["outage", "--config", str(cfg)])
    assert main(["outage", "--protocol", "superposition", "--L", "2", "--N", "1", "--r", "1/6",
                 "--trials", "3000", "--seed", "17", "--snr-db", "5:5:15"]) == 0
    assert body(capsys.readouterr().out) == body(out.read_text())


@pytest.mark.parametrize("text", [
    "runs: []\n",
    "runs:\n  - protocol: superposition\n    bogus_key: 1\n",
    "runs: [\n",
    "runs:\n  - protocol: nonsense\n    snr_db: '5:5:15'\n    out: {out}\n",
    "runs:\n  - protocol: superposition\n    snr_db: '5:5:15'\n    r: '1/6'\n    rate: 2\n    out: {out}\n",
])
def test_malformed_config_exit_2_no_output(tmp_path, text):
    out = tmp_path / "never.csv"
    cfg = tmp_path / "bad.yaml"
    cfg.write_text(text.format(out=out))
    assert main(["outage", "--config", str(cfg)]) == 2
    assert not out.exists()


def test_empty_grid_exit_2(tmp_path):
    out = tmp_path / "x.csv"
    assert main(["ber", "--protocol", "direct", "--snr-db", "10:1:5", "--out", str(out)]) == 2
    assert main(["ber", "--protocol", "direct", "--snr-db", "", "--out", str(out)]) == 2
    assert not out.exists()


def test_missing_config_file_exit_2(tmp_path):
    assert main(["outage", "--config", str(tmp_path / "nope.yaml")]) == 2


def test_runtime_error_exit_3(tmp_path):
    # 16-QAM over eight codewords overflows the detector budget at run time
    assert main(["ber", "--protocol", "superposition", "--L", "4", "--order", "16",
                 "--snr-db", "10", "--max-trials", "10"]) in (2, 3)
    # r > 0 at 0 dB has no defined rate: only discovered while running
    assert main(["outage", "--protocol", "direct", "--snr-db", "0", "--trials", "10"]) == 3


def test_ber_smoke(capsys):
    assert main(["ber", "--protocol", "superposition", "--sp-mode", "2", "--N", "1",
                 "--snr-db", "10,20", "--min-errors", "20", "--max-trials", "5000", "--seed", "3"]) == 0
    out = capsys.readouterr().out
    assert "# order: 8" in out and "# sp_mode: 2" in out


def test_dmt_table(capsys):
    assert main(["dmt", "--N", "2", "--L", "15"]) == 0
    out = capsys.readouterr().out
    rows = {tuple(l.split(",")[i] for i in (0, 3, 4)) for l in out.splitlines() if not l.startswith("#")}
    assert {("superposition", "0", "6"), ("superposition", "15/32", "0"),
            ("repetition", "0", "4"), ("repetition", "15/31", "0"),
            ("standard", "0", "6"), ("standard", "1/4", "0"),
            ("direct", "0", "2"), ("direct", "1/2", "0")} <= rows


def test_dmt_fit(tmp_path, capsys):
    out = tmp_path / "d.csv"
    assert main(["outage", "--protocol", "direct", "--N", "2", "--rate", "1", "--trials", "100000",
                 "--snr-db", "5:2.5:17.5", "--out", str(out), "--seed", "2"]) == 0
    assert main(["dmt", "--fit", str(out), "--window", "5:17.5"]) == 0
    assert "slope" in capsys.readouterr().out


def test_validate_passes(capsys):
    assert main(["validate"]) == 0
    out = capsys.readouterr().out
    for name in ("slot-power-sums", "superposition-matrix-example", "column-path-counts",
                 "msource-m2-equals-two-source", "constellation-energy-and-labels",
                 "outage-fast-vs-exhaustive", "noiseless-end-to-end", "dmt-endpoints-and-crossover"):
        assert f"PASS {name}" in out


def test_validate_catches_bad_scaling(monkeypatch, capsys):
    original = relaysim.schedule._share_power

    def skewed(entries):
        slot = original(entries)
        txs = tuple(type(t)(t.node, t.codewords, t.scale * 1.01) for t in slot.transmissions)
        return type(slot)(txs, slot.alamouti)

    monkeypatch.setattr(relaysim.schedule, "_share_power", skewed)
    assert main(["validate"]) != 0
    assert "FAIL slot-power-sums" in capsys.readouterr().out


def test_module_entry_point():
    done = subprocess.run([sys.executable, "-m", "relaysim", "--version"], capture_output=True,
                          text=True)
    assert done.returncode == 0 and "relaysim" in done.stdout


def test_bad_parameter_types():
    with pytest.raises(ConfigError):
        parse_rational("abc")
    with pytest.raises(ConfigError):
        parse_snr_grid("1:0:5")
