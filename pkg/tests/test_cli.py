"""Command-line contract: exit codes, file outputs, config handling."""

import json

import pytest

from dynmatch import read_trace_csv
from dynmatch.cli import main

ONE_TYPE_DOC = {
    "types": [{"label": "solo", "arrival_rate": 1.0, "departure_rate": 1.0}],
    "values": [["solo", "solo", 1.0]],
}

TWO_TYPE_DOC = {
    "types": [
        {"label": "a", "arrival_rate": 1.0, "departure_rate": 1.0},
        {"label": "b", "arrival_rate": 0.8, "departure_rate": "inf"},
    ],
    "values": [["a", "a", 0.5], ["a", "b", 1.0]],
}


@pytest.fixture
def one_type_file(tmp_path):
    p = tmp_path / "one.json"
    p.write_text(json.dumps(ONE_TYPE_DOC))
    return str(p)


@pytest.fixture
def two_type_file(tmp_path):
    p = tmp_path / "two.json"
    p.write_text(json.dumps(TWO_TYPE_DOC))
    return str(p)


class TestValidate:
    def test_good_instance_exit_zero(self, one_type_file, capsys):
        assert main(["validate", one_type_file]) == 0
        assert "ok" in capsys.readouterr().out

    def test_domain_violation_exit_one(self, tmp_path, capsys):
        p = tmp_path / "bad.json"
        doc = json.loads(json.dumps(ONE_TYPE_DOC))
        doc["types"][0]["arrival_rate"] = 0.0
        p.write_text(json.dumps(doc))
        assert main(["validate", str(p)]) == 1
        assert "arrival_rate_not_positive" in capsys.readouterr().err

    def test_malformed_json_exit_two_with_line(self, tmp_path, capsys):
        p = tmp_path / "broken.json"
        p.write_text('{\n  "types": [,]\n}')
        assert main(["validate", str(p)]) == 2
        assert "line 2" in capsys.readouterr().err

    def test_wrong_shape_exit_two(self, tmp_path, capsys):
        p = tmp_path / "shape.json"
        p.write_text(json.dumps({"types": [], "rogue": 1}))
        assert main(["validate", str(p)]) == 2

    def test_missing_file_exit_two(self, tmp_path):
        assert main(["validate", str(tmp_path / "nope.json")]) == 2


class TestLp:
    def test_analytic_value_in_json(self, one_type_file, tmp_path, capsys):
        out = tmp_path / "lp.json"
        assert main(["lp", one_type_file, "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert abs(doc["value"] - 0.5) <= 1e-8
        assert doc["schema_version"] == 1
        assert doc["feasibility"]["ok"] is True
        assert len(doc["alpha"]) == 1
        text = capsys.readouterr().out
        assert "maximize" in text and "subject to" in text

    def test_out_flag_required(self, one_type_file):
        with pytest.raises(SystemExit) as err:
            main(["lp", one_type_file])
        assert err.value.code == 2


class TestSimulate:
    def args(self, instance, out, extra=()):
        return [
            "simulate", "--instance", instance, "--seed", "42",
            "--horizon", "300", "--replications", "2", "--out", out,
            *extra,
        ]

    def test_runs_and_reruns_byte_identical(self, two_type_file, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        extra = ["--policy", "online_match", "--policy", "greedy"]
        assert main(self.args(two_type_file, str(a), extra)) == 0
        assert main(self.args(two_type_file, str(b), extra)) == 0
        files = sorted(p.name for p in a.iterdir())
        assert files == sorted(p.name for p in b.iterdir())
        assert "report.json" in files
        assert any(f.startswith("trace_online_match") for f in files)
        for name in files:
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_traces_parse_back(self, two_type_file, tmp_path):
        out = tmp_path / "run"
        assert main(self.args(two_type_file, str(out))) == 0
        report = json.loads((out / "report.json").read_text())
        block = report["policies"][0]
        for row in block["replications"]:
            trace, meta = read_trace_csv(out / row["trace_file"])
            assert trace.seed == row["seed"]
            assert meta["policy"] == "online_match-0.5"
        assert report["lp_value"] is not None
        assert report["seed"] == 42

    def test_missing_required_setting_exit_two(self, two_type_file, tmp_path, capsys):
        code = main(["simulate", "--instance", two_type_file,
                     "--out", str(tmp_path / "x")])
        assert code == 2
        assert "missing required setting" in capsys.readouterr().err

    def test_flags_override_config(self, two_type_file, tmp_path):
        cfg = {
            "instance": two_type_file,
            "seed": 7,
            "horizon": 120.0,
            "replications": 1,
            "out": str(tmp_path / "from_config"),
            "policies": ["greedy"],
        }
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(cfg))
        out = tmp_path / "flagged"
        assert main(["simulate", "--config", str(cfg_path),
                     "--horizon", "60", "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["horizon"] == 60.0
        assert report["seed"] == 7  # config value survives where no flag given
        assert report["policies"][0]["policy"]["kind"] == "greedy"

    def test_unknown_config_key_exit_two(self, two_type_file, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"instance": two_type_file, "bogus": 1}))
        assert main(["simulate", "--config", str(cfg_path)]) == 2
        assert "bogus" in capsys.readouterr().err

    def test_config_parse_error_reports_line(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text('{\n  "seed": ,\n}')
        assert main(["simulate", "--config", str(cfg_path)]) == 2
        assert "line 2" in capsys.readouterr().err

    def test_periodic_needs_period(self, two_type_file, tmp_path, capsys):
        code = main(self.args(two_type_file, str(tmp_path / "x"),
                              ["--policy", "periodic_clear"]))
        assert code == 2
        assert "clear_period" in capsys.readouterr().err

    def test_burn_in_domain_error_exit_one(self, two_type_file, tmp_path):
        code = main(["simulate", "--instance", two_type_file, "--seed", "1",
                     "--horizon", "100", "--burn-in", "100",
                     "--out", str(tmp_path / "x")])
        assert code == 1


class TestCompare:
    def test_ratios_and_shared_seeds(self, two_type_file, tmp_path):
        out = tmp_path / "cmp"
        assert main(["compare", "--instance", two_type_file, "--seed", "5",
                     "--horizon", "400", "--replications", "3",
                     "--out", str(out)]) == 0
        doc = json.loads((out / "comparison.json").read_text())
        assert len(doc["policies"]) == 2  # online_match and greedy defaults
        assert len(doc["replication_seeds"]) == 3
        for row in doc["policies"]:
            assert 0.0 <= row["ratio_to_lp"] <= 1.5
        assert doc["lp_value"] == pytest.approx(0.85, abs=1e-8)

    def test_zero_value_market_not_applicable(self, tmp_path):
        p = tmp_path / "zero.json"
        p.write_text(json.dumps({
            "types": [{"label": "a", "arrival_rate": 1.0, "departure_rate": 1.0}],
            "values": [],
        }))
        out = tmp_path / "cmp"
        assert main(["compare", "--instance", str(p), "--seed", "3",
                     "--horizon", "200", "--out", str(out)]) == 0
        doc = json.loads((out / "comparison.json").read_text())
        assert all(r["ratio_to_lp"] == "NOT_APPLICABLE" for r in doc["policies"])

    def test_hindsight_ladder(self, two_type_file, tmp_path):
        out = tmp_path / "cmp"
        assert main(["compare", "--instance", two_type_file, "--seed", "5",
                     "--horizon", "200", "--hindsight-horizons", "5,10",
                     "--hindsight-replications", "10",
                     "--exact-threshold", "40", "--out", str(out)]) == 0
        doc = json.loads((out / "comparison.json").read_text())
        assert [h["horizon"] for h in doc["hindsight"]] == [5.0, 10.0]
        assert all(h["se"] >= 0.0 for h in doc["hindsight"])

    def test_diagnostics_needs_long_horizon(self, two_type_file, tmp_path):
        code = main(["compare", "--instance", two_type_file, "--seed", "5",
                     "--horizon", "200", "--with-diagnostics",
                     "--out", str(tmp_path / "cmp")])
        assert code == 1


class TestDiagnose:
    def test_healthy_run_exit_zero(self, one_type_file, tmp_path, capsys):
        out = tmp_path / "diag"
        code = main(["diagnose", "--instance", one_type_file, "--seed", "9",
                     "--horizon", "12000", "--out", str(out)])
        assert code == 0
        doc = json.loads((out / "diagnostics.json").read_text())
        assert doc["schema_version"] == 1
        assert doc["rows"]
        verdicts = {r["verdict"] for r in doc["rows"]}
        assert "FAIL" not in verdicts
        assert "bounds checked" in capsys.readouterr().out

    def test_domain_error_on_tiny_horizon(self, one_type_file, tmp_path):
        code = main(["diagnose", "--instance", one_type_file, "--seed", "9",
                     "--horizon", "100", "--out", str(tmp_path / "d")])
        assert code == 1
