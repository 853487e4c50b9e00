import json
import subprocess
import sys

from mdaircomp import harness
from mdaircomp.cli import run_cli

TINY = ["--set", "blocks=5", "--set", "bench_ka=4", "--set", "J=5", "--set", "L=12"]


def test_overhead(tmp_path, capsys):
    rc = run_cli(["overhead", "--w", "269722", "--q", "20", "--l", "20", "--k", "40", "--p", "1024",
                  "--out", str(tmp_path)])
    assert rc == 0
    out = capsys.readouterr().out.splitlines()
    assert out == ["VQ+OFDMA: 527", "FSK-MV: 527", "OBDA: 264", "MD-AirComp: 264"]
    assert (tmp_path / "overhead.csv").read_text().splitlines()[1] == "269722,20,20,40,1024,527,527,264,264"
    assert harness.read_manifest(tmp_path / "overhead-manifest.json")["command"] == "overhead"


def test_detect_bench_reproducible(tmp_path):
    args = ["detect-bench", "--snr", "0", "20", "--trials", "3", "--seed", "7"] + TINY
    assert run_cli(args + ["--out", str(tmp_path / "a")]) == 0
    assert run_cli(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("detect_bench.csv", "ka_pmf.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    m = harness.read_manifest(tmp_path / "a" / "detect-bench-manifest.json")
    assert m["status"] == "complete" and m["seeds"] == [7]
    assert len((tmp_path / "a" / "detect_bench.csv").read_text().splitlines()) == 1 + 6


def test_env_out_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(harness.OUT_ENV, str(tmp_path))
    assert run_cli(["detect-bench", "--trials", "1"] + TINY) == 0
    assert (tmp_path / "detect_bench.csv").exists()


def test_feel_zero_rounds(tmp_path):
    assert run_cli(["feel", "--rounds", "0", "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "feel.csv").read_text().splitlines()
    assert len(lines) == 1
    assert json.loads((tmp_path / "feel-manifest.json").read_text())["status"] == "complete"


def test_sweep(tmp_path):
    rc = run_cli(["sweep", "--axis", "L=10,12", "--set", "trials=2", "--out", str(tmp_path)] + TINY[:6])
    assert rc == 0
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert lines[0].startswith("point,setting,snr_db")
    assert len(lines) == 1 + 4


def test_bad_config_exits_nonzero(tmp_path, capsys):
    (tmp_path / "bad.cfg").write_text("nonsense = 3\n")
    assert run_cli(["detect-bench", "--config", str(tmp_path / "bad.cfg"), "--out", str(tmp_path)]) == 2
    assert "unknown config key" in capsys.readouterr().err
    assert run_cli(["detect-bench", "--set", "M=0", "--out", str(tmp_path)]) == 2
    assert run_cli(["nope"]) != 0


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "mdaircomp", "overhead", "--w", "1000", "--q", "1", "--l", "1",
                          "--k", "1", "--p", "64", "--out", str(tmp_path)],
                         capture_output=True, text=True, check=True)
    assert "MD-AirComp: 16" in out.stdout
