import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from psq.cli import main
from psq.spectrality import dilation_from_bytes

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL_GRID = """
[grid]
window = [-4.0, 4.0, -4.0, 4.0]
cells = [8, 8]
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def run_json(capsys, argv):
    code = main(argv)
    out = capsys.readouterr().out
    return code, (json.loads(out) if out.strip() else None)


class TestRun:
    def test_noise_config(self, tmp_path, capsys):
        code, out = run_json(capsys, ["run", str(CONFIGS / "noise.toml"), "--out", str(tmp_path)])
        assert code == 0
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        product = manifest["checks"]["uncertainty_product"]["value"]
        assert product == pytest.approx(0.25, abs=1e-9)
        assert out["report"]["variances"]["product"] == pytest.approx(0.25, abs=1e-9)

    def test_covariance_config(self, tmp_path, capsys):
        cfg = write(
            tmp_path,
            "cov.toml",
            'experiment = "covariance"\ndim = 20\nT = "number:0"\n'
            + SMALL_GRID
            + "[params]\nshift = [1, 0]\ncentral = 4\n",
        )
        out = tmp_path / "out"
        code, _ = run_json(capsys, ["run", cfg, "--out", str(out)])
        assert code == 0
        assert sorted(p.name for p in out.iterdir()) == [
            "covariance.csv",
            "covariance.json",
            "manifest.json",
        ]
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["passed"] is True
        assert manifest["config"]["dim"] == 20
        assert manifest["version"]
        assert (out / "covariance.csv").read_text().startswith("cell,defect\n")

    def test_failing_check_exit_one(self, tmp_path, capsys):
        cfg = write(
            tmp_path,
            "cov.toml",
            'experiment = "covariance"\ndim = 20\n' + SMALL_GRID + "[params]\ncentral = 4\nbound = 0.0\n",
        )
        assert main(["run", cfg]) == 1
        assert "central_defect" in capsys.readouterr().err

    def test_unknown_experiment(self, tmp_path, capsys):
        cfg = write(tmp_path, "x.toml", 'experiment = "nonsense"\n')
        assert main(["run", cfg]) == 2
        assert "unknown experiment" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert main(["run", str(tmp_path / "absent.toml")]) == 2

    def test_bad_toml(self, tmp_path):
        assert main(["run", write(tmp_path, "bad.toml", "experiment = \n")]) == 2

    def test_bad_generating_operator(self, tmp_path):
        cfg = write(tmp_path, "n.toml", 'experiment = "noise"\nT = "banana:1"\n')
        assert main(["run", cfg]) == 2

    def test_dim_too_small(self, tmp_path):
        cfg = write(tmp_path, "n.toml", 'experiment = "noise"\ndim = 1\n')
        assert main(["run", cfg]) == 2

    def test_dim_flag_overrides(self, tmp_path, capsys):
        code, _ = run_json(capsys, ["--dim", "30", "run", str(CONFIGS / "noise.toml"), "--out", str(tmp_path)])
        assert code == 0
        assert json.loads((tmp_path / "manifest.json").read_text())["config"]["dim"] == 30

    def test_usage_error(self):
        assert main([]) == 2
        assert main(["moments"]) == 2


class TestSubcommands:
    def test_moments(self, capsys):
        code, out = run_json(capsys, ["moments", "--k", "2", "--dim", "20"])
        assert code == 0
        assert out["report"]["coeffs"] == pytest.approx([0.5, 0.0, 1.0], abs=1e-15)

    def test_moments_oracle(self, capsys):
        code, out = run_json(
            capsys,
            ["moments", "--k", "1", "--dim", "24", "--oracle", "--grid=-12,12,-12,12,24,24", "--block", "12"],
        )
        assert code == 0
        assert out["report"]["defects"]["oracle_block"] < 1e-8
        assert out["report"]["first_moment_identity"] == 0.0

    def test_noise(self, capsys):
        code, out = run_json(capsys, ["noise", "--T", "number:2", "--dim", "40"])
        assert code == 0
        assert out["report"]["variances"]["product"] == pytest.approx(6.25, abs=1e-10)

    def test_scan_t(self, tmp_path, capsys):
        cands = [{"name": "vac", "T": "number:0"}, {"name": "th", "T": "thermal:0.25"}]
        path = write(tmp_path, "c.json", json.dumps(cands))
        code, out = run_json(capsys, ["scan-T", "--candidates", path])
        assert code == 0
        assert [r["name"] for r in out["report"]["ranking"] if r["optimal"]] == ["vac"]

    def test_spectrality_and_dilate_from_file(self, tmp_path, capsys):
        cfg = write(
            tmp_path,
            "norm.toml",
            'experiment = "normalization"\ndim = 12\n'
            '[grid]\nwindow = [-8.0, 8.0, -8.0, 8.0]\ncells = [4, 4]\norder = 24\n',
        )
        out = tmp_path / "norm"
        assert main(["run", cfg, "--out", str(out)]) == 0
        capsys.readouterr()
        povm_file = str(out / "povm.bin")

        code, rep = run_json(capsys, ["spectrality", "--povm", povm_file])
        assert code == 0
        assert rep["report"]["verdict"] == "non-spectral"

        target = tmp_path / "dil" / "vacuum.dil"
        code, rep = run_json(capsys, ["dilate", "--povm", povm_file, "--out", str(target)])
        assert code == 0
        dil = dilation_from_bytes(target.read_bytes())
        assert (dil.dim, dil.n_blocks) == (12, 17)
        side = json.loads(Path(str(target) + ".json").read_text())
        assert side["isometry"] <= 1e-12 and side["reconstruction"] <= 1e-10

    def test_spectrality_missing_povm(self, tmp_path):
        assert main(["spectrality", "--povm", str(tmp_path / "none.bin")]) == 2

    def test_counterexample(self, tmp_path, capsys):
        code, out = run_json(capsys, ["counterexample", "--out", str(tmp_path)])
        assert code == 0
        assert out["report"]["verdict"] == "diverged"
        rows = (tmp_path / "counterexample.csv").read_text().splitlines()
        assert rows[0] == "cutoff,one_sided,symmetric"

    def test_covariance(self, capsys):
        code, out = run_json(capsys, ["covariance", "--grid=-4,4,-4,4,8,8", "--dim", "20", "--shift", "0,1"])
        assert code == 0
        assert out["report"]["g"] == [0.0, 1.0]

    def test_bad_shift(self):
        assert main(["covariance", "--shift", "a,b"]) == 2

    def test_console_script(self):
        res = subprocess.run(
            [sys.executable, "-m", "psq.cli", "--version"], capture_output=True, text=True, check=False
        )
        assert res.returncode == 0
        assert res.stdout.startswith("psq ")


def test_outputs_deterministic(tmp_path, capsys):
    cfg = write(tmp_path, "g.toml", 'experiment = "gamma"\ndim = 10\nseed = 4\n' + SMALL_GRID + "[params]\ntrials = 5\n")
    for name in ("a", "b"):
        assert main(["run", cfg, "--out", str(tmp_path / name)]) == 0
    capsys.readouterr()
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
    assert np.isfinite(json.loads((tmp_path / "a" / "gamma.json").read_text())["linearity"])


def test_threads_do_not_change_results(tmp_path, capsys):
    cfg = write(tmp_path, "n.toml", 'experiment = "normalization"\ndim = 16\n' + SMALL_GRID)
    for t in ("1", "3"):
        assert main(["--threads", t, "run", cfg, "--out", str(tmp_path / t)]) == 0
    capsys.readouterr()
    for name in ("povm.bin", "normalization.json", "effects.csv"):
        assert (tmp_path / "1" / name).read_bytes() == (tmp_path / "3" / name).read_bytes()
