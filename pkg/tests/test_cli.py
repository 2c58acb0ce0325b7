import csv
import hashlib
import json
import os

import pytest
from click.testing import CliRunner

from shelterplan.cli import main


def digest(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


@pytest.fixture()
def runner():
    return CliRunner()


GEN_ARGS = [
    "generate", "--youth", "12", "--days", "30", "--theta", "0.2",
    "--bed-scale", "0.1", "--seed", "7", "--out", "inst.json",
]


class TestGenerate:
    def test_writes_instance_and_manifest(self, runner, tmp_path):
        with runner.isolated_filesystem(temp_dir=tmp_path):
            result = runner.invoke(main, GEN_ARGS)
            assert result.exit_code == 0, result.output
            doc = json.load(open("inst.json"))
            assert len(doc["youths"]) == 12
            manifest = json.load(open("inst.json.manifest.json"))
            assert manifest["command"] == "generate"
            assert manifest["instance_seed"] == 7
            assert "inst.json" in manifest["outputs"]

    def test_covid_flag_sets_levels(self, runner, tmp_path):
        with runner.isolated_filesystem(temp_dir=tmp_path):
            result = runner.invoke(
                main, ["generate", "--covid", "--days", "20", "--seed", "1",
                       "--out", "c.json"],
            )
            assert result.exit_code == 0, result.output
            manifest = json.load(open("c.json.manifest.json"))
            assert manifest["args"]["youth"] == 400
            assert manifest["args"]["capacity_scale"] == 0.5

    def test_same_flags_identical_digests(self, runner, tmp_path):
        with runner.isolated_filesystem(temp_dir=tmp_path):
            assert runner.invoke(main, GEN_ARGS).exit_code == 0
            d1 = digest("inst.json")
            assert runner.invoke(main, GEN_ARGS[:-1] + ["inst2.json"]).exit_code == 0
            assert d1 == digest("inst2.json")

    def test_bad_theta_is_data_error(self, runner, tmp_path):
        with runner.isolated_filesystem(temp_dir=tmp_path):
            result = runner.invoke(main, ["generate", "--theta", "1.5", "--out", "x.json"])
            assert result.exit_code == 3


class TestSolve:
    def test_default_gap_is_one_percent(self, runner, tmp_path):
        with runner.isolated_filesystem(temp_dir=tmp_path):
            assert runner.invoke(main, GEN_ARGS).exit_code == 0
            result = runner.invoke(
                main, ["solve", "--instance", "inst.json", "--out", "sol.json"]
            )
            assert result.exit_code == 0, result.output
            manifest = json.load(open("sol.json.manifest.json"))
            assert manifest["solver_config"]["rel_gap"] == 0.01
            sol = json.load(open("sol.json"))
            assert sol["status"] in ("Optimal", "GapReached")
            assert sol["gap"] <= 0.01

    def test_gap_zero_proves_optimum(self, runner, tmp_path):
        with runner.isolated_filesystem(temp_dir=tmp_path):
            assert runner.invoke(main, GEN_ARGS).exit_code == 0
            result = runner.invoke(
                main, ["solve", "--instance", "inst.json", "--gap", "0", "--out", "s.json"]
            )
            assert result.exit_code == 0, result.output
            assert json.load(open("s.json"))["status"] == "Optimal"

    def test_time_limit_exits_with_limit_code(self, runner, tmp_path):
        with runner.isolated_filesystem(temp_dir=tmp_path):
            assert runner.invoke(main, GEN_ARGS).exit_code == 0
            result = runner.invoke(
                main,
                ["solve", "--instance", "inst.json", "--time-limit", "0",
                 "--gap", "0", "--out", "s.json"],
            )
            assert result.exit_code == 4, result.output
            assert json.load(open("s.json"))["status"] == "TimeLimit"

    def test_solution_verifies_via_cli(self, runner, tmp_path):
        with runner.isolated_filesystem(temp_dir=tmp_path):
            assert runner.invoke(main, GEN_ARGS).exit_code == 0
            assert runner.invoke(
                main, ["solve", "--instance", "inst.json", "--out", "sol.json"]
            ).exit_code == 0
            result = runner.invoke(
                main, ["verify", "--instance", "inst.json", "--solution", "sol.json"]
            )
            assert result.exit_code == 0
            assert "verification passed" in result.output

    def test_corrupted_solution_fails_verification(self, runner, tmp_path):
        with runner.isolated_filesystem(temp_dir=tmp_path):
            assert runner.invoke(main, GEN_ARGS).exit_code == 0
            assert runner.invoke(
                main, ["solve", "--instance", "inst.json", "--out", "sol.json"]
            ).exit_code == 0
            doc = json.load(open("sol.json"))
            xkeys = [k for k in doc["values"] if k.startswith("X_")]
            del doc["values"][xkeys[0]]
            json.dump(doc, open("bad.json", "w"))
            result = runner.invoke(
                main, ["verify", "--instance", "inst.json", "--solution", "bad.json"]
            )
            assert result.exit_code == 5

    def test_malformed_instance_is_data_error(self, runner, tmp_path):
        with runner.isolated_filesystem(temp_dir=tmp_path):
            open("broken.json", "w").write("{not json")
            result = runner.invoke(
                main, ["solve", "--instance", "broken.json", "--out", "s.json"]
            )
            assert result.exit_code == 3


class TestBuildAndReport:
    def test_build_exports(self, runner, tmp_path):
        with runner.isolated_filesystem(temp_dir=tmp_path):
            assert runner.invoke(main, GEN_ARGS).exit_code == 0
            result = runner.invoke(
                main,
                ["build", "--instance", "inst.json", "--mps-out", "m.mps",
                 "--triplets-out", "m.tri"],
            )
            assert result.exit_code == 0, result.output
            assert os.path.exists("m.mps") and os.path.exists("m.tri")
            assert "columns:" in result.output

    def test_report_bundle(self, runner, tmp_path):
        with runner.isolated_filesystem(temp_dir=tmp_path):
            assert runner.invoke(main, GEN_ARGS).exit_code == 0
            assert runner.invoke(
                main, ["solve", "--instance", "inst.json", "--out", "sol.json"]
            ).exit_code == 0
            result = runner.invoke(
                main,
                ["report", "--instance", "inst.json", "--solution", "sol.json",
                 "--out-dir", "rep"],
            )
            assert result.exit_code == 0, result.output

            rows = list(csv.reader(open("rep/beds_by_source.csv")))
            assert rows[0] == [
                "organization", "kind", "existing", "extra", "overflow", "incompatibility"
            ]
            assert len(rows) == 1 + 8 + 1  # header, 8 housing orgs, catch-all

            served = sum(
                int(r[2]) + int(r[3]) + int(r[4]) + int(r[5]) for r in rows[1:]
            )
            doc = json.load(open("inst.json"))
            assert served == len(doc["youths"])

            heat = list(csv.reader(open("rep/extra_hours_heatmap.csv")))
            assert len(heat) == 1 + 8
            assert len(heat[0]) == 1 + 14

            series = list(csv.reader(open("rep/overflow_timeseries.csv")))
            assert len(series) == 1 + 30


class TestScenario:
    def test_single_seed_grid(self, runner, tmp_path):
        with runner.isolated_filesystem(temp_dir=tmp_path):
            result = runner.invoke(main, ["scenario", "--single-seed", "--out-dir", "sc"])
            assert result.exit_code == 0, result.output
            files = os.listdir("sc")
            assert "comparison.csv" in files
            assert (
                sum(1 for f in files if f.startswith("scenario_") and f.endswith(".json"))
                == 8
            )
            rows = list(csv.reader(open("sc/comparison.csv")))
            assert len(rows) == 9
            base_row = next(r for r in rows[1:] if r[0] == "base")
            assert float(base_row[6]) == 0.0  # overflow-cost delta of base vs itself

    def test_full_scale_generation(self, runner, tmp_path):
        with runner.isolated_filesystem(temp_dir=tmp_path):
            result = runner.invoke(
                main,
                ["generate", "--youth", "500", "--days", "180", "--theta", "0.2",
                 "--seed", "7", "--out", "full.json"],
            )
            assert result.exit_code == 0, result.output
            doc = json.load(open("full.json"))
            assert len(doc["youths"]) == 500
            assert doc["horizon_T"] == 180


class TestDeterminism:
    def test_pipeline_digests_reproduce(self, runner, tmp_path):
        digests = []
        for run in (1, 2):
            with runner.isolated_filesystem(temp_dir=tmp_path):
                assert runner.invoke(main, GEN_ARGS).exit_code == 0
                assert runner.invoke(
                    main,
                    ["solve", "--instance", "inst.json", "--out", "sol.json",
                     "--threads", "1"],
                ).exit_code == 0
                assert runner.invoke(
                    main,
                    ["report", "--instance", "inst.json", "--solution", "sol.json",
                     "--out-dir", "rep"],
                ).exit_code == 0
                files = ["inst.json", "sol.json"] + sorted(
                    os.path.join("rep", f) for f in os.listdir("rep")
                    if f.endswith(".csv")
                )
                digests.append([digest(f) for f in files])
        assert digests[0] == digests[1]
