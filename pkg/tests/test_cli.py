import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from lbmlab.cli import main
from lbmlab.field import read_field_binary

BM = {"model": {"preset": "bm"}, "run": {"dt": 0.01, "horizon": 0.5, "paths": 500}}
LBM = {"family": "LBM", "preset": "lbm",
       "params": {"m": 1.0, "gamma": 1.0, "n": 3,
                  "grid": {"origin": [-4, -4], "extent": [8, 8], "resolution": [9, 9]}},
       "run": {"dt": 0.01, "horizon": 0.5, "paths": 400, "sample_times": [0.25, 0.5]}}


@pytest.fixture
def write_config(tmp_path):
    def write(doc, name="c.json"):
        path = tmp_path / name
        path.write_text(json.dumps(doc))
        return str(path)

    return write


class TestGreenTable:
    def test_csv(self, tmp_path):
        out = tmp_path / "g.csv"
        assert main(["green-table", "--m", "1", "--rmin", "0.1", "--rmax", "5", "--steps", "20", "--out", str(out)]) == 0
        rows = list(csv.DictReader(out.open()))
        assert len(rows) == 20 and list(rows[0]) == ["r", "G", "K0_oracle", "rel_err"]
        assert max(float(r["rel_err"]) for r in rows) < 1e-9

    def test_bad_args(self):
        assert main(["green-table", "--m", "-1", "--rmin", "0.1", "--rmax", "5", "--steps", "2"]) == 2


class TestVerify:
    def test_smoke_passes_and_is_reproducible(self, write_config, tmp_path):
        cfg = write_config(BM)
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        assert main(["verify", "--suite", "smoke", "--config", cfg, "--seed", "3", "--out", str(a)]) == 0
        assert main(["--seed", "3", "verify", "--suite", "smoke", "--config", cfg, "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()
        doc = json.loads(a.read_text())
        assert doc["suite"] == "smoke" and doc["seed"] == 3 and all(r["pass"] for r in doc["results"])

    def test_negative_control_exits_one(self, write_config):
        assert main(["verify", "--suite", "negative-control", "--config", write_config(BM)]) == 1

    def test_broken_config_exits_two(self, write_config):
        bad = json.loads(json.dumps(LBM))
        bad["params"]["gamma"] = 2.5
        assert main(["verify", "--config", write_config(bad)]) == 2
        assert main(["verify", "--config", "/nonexistent.json"]) == 2
        assert main(["verify"]) == 2
        assert main(["verify", "--suite", "bogus", "--config", write_config(BM)]) == 2

    def test_suite_needs_field(self, write_config):
        assert main(["verify", "--suite", "liouville-mass", "--config", write_config(BM)]) == 2

    def test_acceptance_suite_small(self, write_config, tmp_path):
        out = tmp_path / "r.json"
        assert main(["verify", "--suite", "acceptance", "--config", write_config(LBM), "--seed", "1",
                     "--out", str(out)]) == 0
        names = [r["name"] for r in json.loads(out.read_text())["results"]]
        assert any(n.startswith("cross_construction") for n in names)
        assert any(n.startswith("liouville_mass") for n in names)


class TestOtherCommands:
    def test_sample_field_formats(self, write_config, tmp_path):
        cfg = write_config(LBM)
        assert main(["sample-field", "--config", cfg, "--seed", "5", "--out", str(tmp_path / "f.gfld")]) == 0
        assert main(["sample-field", "--config", cfg, "--seed", "5", "--out", str(tmp_path / "f.csv")]) == 0
        nx, ny, vals = read_field_binary(tmp_path / "f.gfld")
        rows = list(csv.DictReader((tmp_path / "f.csv").open()))
        assert (nx, ny) == (9, 9)
        np.testing.assert_array_equal(vals, [float(r["value"]) for r in rows])

    def test_sample_field_needs_field(self, write_config, tmp_path):
        assert main(["sample-field", "--config", write_config(BM), "--out", str(tmp_path / "f.csv")]) == 2

    def test_simulate_paths(self, write_config, tmp_path):
        out = tmp_path / "paths"
        assert main(["simulate", "--config", write_config(BM), "--paths", "3", "--dt", "0.1",
                     "--horizon", "0.5", "--out", str(out)]) == 0
        files = sorted(p.name for p in out.iterdir())
        assert files == ["path_00000.csv", "path_00001.csv", "path_00002.csv"]
        lines = (out / files[0]).read_text().splitlines()
        assert lines[0] == "t,x1,x2,status" and len(lines) == 7

    def test_simulate_moments(self, write_config, tmp_path):
        doc = dict(LBM, io={"format": "moments"})
        out = tmp_path / "m"
        assert main(["simulate", "--config", write_config(doc), "--seed", "2", "--out", str(out)]) == 0
        recs = json.loads((out / "moments.json").read_text())
        assert [r["t"] for r in recs] == [0.25, 0.5]
        assert set(recs[0]) == {"t", "mean", "cov", "killed_fraction"}
        assert np.array(recs[1]["cov"]).shape == (2, 2)

    def test_check_generator(self, write_config, tmp_path):
        out = tmp_path / "g.json"
        assert main(["check-generator", "--config", write_config(LBM), "--out", str(out)]) == 0
        assert len(json.loads(out.read_text())["results"]) == 3

    def test_module_entry_point(self, write_config):
        proc = subprocess.run([sys.executable, "-m", "lbmlab", "verify", "--suite", "generator",
                               "--config", write_config(BM)], capture_output=True, text=True)
        assert proc.returncode == 0 and proc.stdout.count("[PASS]") == 3
