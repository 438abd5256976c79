import csv
import json

import pytest

from artifact.cli import config_hash, load_json_arg, main


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def sidecar(path):
    return json.loads((path.parent / (path.name + ".json")).read_text())


class TestConfigLoading:
    def test_sources(self, tmp_path):
        f = tmp_path / "s.json"
        f.write_text('{"kind": "torus"}')
        assert load_json_arg(str(f)) == {"kind": "torus"}
        assert load_json_arg('{"kind": "sphere", "radius": 2}') == {"kind": "sphere", "radius": 2}
        assert load_json_arg("ellipsoid") == {"kind": "ellipsoid"}

    def test_hash_ignores_key_order(self):
        assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})


class TestExitCodes:
    def test_usage_errors(self, tmp_path, capsys):
        assert main(["bogus"]) == 2
        assert main(["check", "--no-such-flag"]) == 2
        assert main(["check", "--out", str(tmp_path)]) == 2  # no surface
        assert main(["check", "--surface", '{"kind": "blob"}', "--out", str(tmp_path)]) == 2

    def test_validation_failure(self, tmp_path, capsys):
        # twelve samples per axis cannot resolve the integral identity
        assert main(["check", "--surface", "sphere", "--resolution", "12", "--out", str(tmp_path)]) == 1
        rows = read_csv(tmp_path / "check.csv")
        assert rows[0] == ["name", "residual", "tolerance", "passed"]
        assert {r[0]: r[3] for r in rows[1:]}["integration_by_parts"] == "0"


class TestSubcommands:
    def test_report(self, tmp_path, capsys):
        assert main(["report", "--surface", "torus", "--resolution", "8", "--out", str(tmp_path)]) == 0
        meta = sidecar(tmp_path / "report.csv")
        assert meta["command"] == "report" and len(meta["config_hash"]) == 64
        assert "numpy" in meta["versions"]

    def test_config_file_and_flag_override(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"surface": {"kind": "sphere", "radius": 2.0}, "resolution": 64}))
        assert main(["report", "--config", str(cfg), "--resolution", "8", "--out", str(tmp_path)]) == 0
        assert sidecar(tmp_path / "report.csv")["config"]["resolution"] == 8

    def test_graph_report(self, tmp_path, capsys):
        rc = main(["graph-report", "--surface", "sphere", "--height",
                   '{"kind": "waves", "seed": 1, "amplitude": 0.05}', "--resolution", "12", "--out", str(tmp_path)])
        assert rc == 0
        assert (tmp_path / "graph_report.json").exists()

    def test_variation_check(self, tmp_path, capsys):
        rc = main(["variation-check", "--surface", "sphere", "--which", "beta", "--resolution", "8",
                   "--height", '{"kind": "waves", "amplitude": 0.05}', "--out", str(tmp_path)])
        assert rc == 0
        assert read_csv(tmp_path / "variation_beta.csv")[0] == ["eps", "error", "order", "roundoff"]

    def test_distance(self, tmp_path, capsys):
        pts = tmp_path / "pts.csv"
        pts.write_text("0.0,0.0,1.2\n0.5,0.0,0.0\n")
        rc = main(["distance", "--surface", "sphere", "--points", str(pts), "--resolution", "12",
                   "--out", str(tmp_path)])
        assert rc == 0
        rows = read_csv(tmp_path / "distance.csv")
        assert len(rows) == 3

    def test_flow(self, tmp_path, capsys):
        cfg = {"surface": {"kind": "sphere", "n": 2}, "resolution": 32, "T": 0.002, "dt": 5e-4,
               "snapshots": [0.001], "diagnostics_every": 1}
        assert main(["flow", "--config", json.dumps(cfg), "--out", str(tmp_path)]) == 0
        assert len(read_csv(tmp_path / "flow_diagnostics.csv")) == 6
        assert (tmp_path / "snapshot_t0.001000.obj").exists()
        assert (tmp_path / "flow_diagnostics.csv.json").exists()

    def test_flow_blowup_exit_code(self, tmp_path, capsys):
        cfg = {"surface": {"kind": "sphere", "n": 2}, "initial": -0.7, "resolution": 32, "T": 0.1, "dt": 1e-4,
               "diagnostics_every": 50}
        assert main(["flow", "--config", json.dumps(cfg), "--out", str(tmp_path)]) == 1
        rows = read_csv(tmp_path / "flow_diagnostics.csv")
        assert len(rows) > 3  # history before the blowup is kept

    def test_metric(self, tmp_path, capsys):
        rc = main(["metric", "--surfaces", "sphere", '{"kind": "sphere", "radius": 1.2}', "--order", "0",
                   "--resolution", "12", "--out", str(tmp_path)])
        assert rc == 0
        rows = read_csv(tmp_path / "metric.csv")
        assert rows[0] == ["i", "j", "distance"]
        assert abs(float(rows[1][2]) - 0.2) < 1e-12
