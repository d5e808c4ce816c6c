import csv
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from crnsim.cli import main
from crnsim.harness import (
    CURVES_HEADER,
    FINALS_HEADER,
    ConfigFileError,
    ConfigParseError,
    ConfigValidationError,
    load_spec,
    replication_seed,
    run_experiment,
    write_outputs,
)

REFERENCE = Path(str(resources.files("crnsim") / "data" / "reference.cfg"))

SMALL = {
    "num_channels": 4,
    "num_users": 6,
    "num_slots": 5,
    "replications": 3,
    "policies": "classic,qmodel",
}


def write_cfg(tmp_path, text, name="exp.cfg"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadSpec:
    def test_reference_defaults(self):
        spec = load_spec(REFERENCE)
        assert spec.base.channels.num_channels == 10
        assert spec.base.num_users == 100
        assert spec.base.channels.payload_bits == 100_000
        assert spec.base.policy.params.reward_rate == 0.5
        assert spec.base.policy.params.penalty_rate == 0.5
        assert spec.replications == 20
        assert spec.base.num_slots == 4000
        theta = spec.base.channels.occupancy_free_prob
        assert len(theta) == 10 and all(0.1 <= x <= 0.9 for x in theta)

    def test_override_wins(self):
        assert load_spec(REFERENCE, {"num_users": "1"}).base.num_users == 1
        assert load_spec(REFERENCE, {"num_users": 3}).base.num_users == 3

    def test_rate_out_of_bounds(self, tmp_path):
        path = write_cfg(tmp_path, "reward_rate = 1.5\n")
        with pytest.raises(ConfigValidationError) as err:
            load_spec(path)
        assert err.value.field == "reward_rate"
        assert "(0, 1)" in str(err.value)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigFileError):
            load_spec(tmp_path / "nope.cfg")

    def test_parse_error_has_line(self, tmp_path):
        path = write_cfg(tmp_path, "# header\nnum_users = 4\nthis line is junk\n")
        with pytest.raises(ConfigParseError) as err:
            load_spec(path)
        assert err.value.line == 3
        assert ":3:" in str(err.value)

    def test_unknown_key(self, tmp_path):
        path = write_cfg(tmp_path, "num_user = 4\n")
        with pytest.raises(ConfigParseError, match="unknown key"):
            load_spec(path)
        with pytest.raises(ConfigValidationError):
            load_spec(None, {"bogus": "1"})

    def test_duplicate_key(self, tmp_path):
        path = write_cfg(tmp_path, "seed = 1\nseed = 2\n")
        with pytest.raises(ConfigParseError, match="duplicate"):
            load_spec(path)

    def test_comments_and_blank_lines(self, tmp_path):
        path = write_cfg(tmp_path, "\n# comment\nnum_users = 7  # trailing\n\n")
        assert load_spec(path).base.num_users == 7

    @pytest.mark.parametrize(
        "key,value",
        [
            ("num_users", "0"),
            ("num_users", "many"),
            ("penalty_rate", "1.0"),
            ("occupancy_free_prob", "0.5,0.5"),
            ("occupancy_free_prob", ",".join(["1.5"] * 10)),
            ("policies", "classic,magic"),
            ("policies", "classic,classic"),
            ("replications", "0"),
            ("snr_db_min", "10"),
            ("q_threshold", "0.01"),
            ("seed", "-4"),
            ("admission", "maybe"),
        ],
    )
    def test_validation_errors(self, key, value):
        with pytest.raises(ConfigValidationError):
            load_spec(REFERENCE, {key: value})

    def test_explicit_occupancy(self):
        spec = load_spec(None, {"num_channels": 3, "occupancy_free_prob": "0.9, 0.5, 0.1"})
        assert spec.base.channels.occupancy_free_prob == (0.9, 0.5, 0.1)

    def test_inert_table_constant_is_carried(self):
        assert load_spec(REFERENCE).base.legacy_initial_throughput == 3.0


class TestRunExperiment:
    def test_cardinality(self):
        spec = load_spec(None, {**SMALL, "policies": "classic,reward_penalty"})
        result = run_experiment(spec)
        assert len(result.finals) == 6
        assert set(result.curves) == {"classic", "reward_penalty"}
        assert all(c.shape == (5,) for c in result.curves.values())

    def test_curve_end_matches_final_mean(self):
        spec = load_spec(None, {**SMALL, "num_slots": 300, "policies": "reward_only"})
        result = run_experiment(spec)
        assert result.curves["reward_only"][-1] == pytest.approx(
            result.total_bits("reward_only").mean(), rel=1e-12
        )

    def test_seed_streams_are_independent_of_policy_list(self):
        a = run_experiment(load_spec(None, {**SMALL, "policies": "classic"}))
        b = run_experiment(load_spec(None, {**SMALL, "policies": "classic,qmodel"}))
        for r in range(3):
            np.testing.assert_array_equal(
                a.finals["classic", r].slot_bits, b.finals["classic", r].slot_bits
            )

    def test_seed_derivation_distinct(self):
        states = {
            tuple(replication_seed(0, p, r).generate_state(4)) for p in range(3) for r in range(5)
        }
        assert len(states) == 15


class TestWriteOutputs:
    def test_schema_and_rows(self, tmp_path):
        spec = load_spec(None, {**SMALL, "policies": "qmodel", "replications": 2})
        paths = write_outputs(run_experiment(spec), tmp_path)
        curves = (tmp_path / "curves.csv").read_text().splitlines()
        finals = (tmp_path / "finals.csv").read_text().splitlines()
        assert curves[0] == CURVES_HEADER
        assert len(curves) == 1 + 5
        assert finals[0] == FINALS_HEADER
        assert finals[0] == "policy,replication,total_bits,fairness,blocking_rate,collisions,switch_cost,runtime_s"
        assert len(finals) == 1 + 2
        assert [p.name for p in paths] == ["curves.csv", "finals.csv", "summary.txt"]
        assert "qmodel: total_bits mean=" in (tmp_path / "summary.txt").read_text()

    def test_rows_parse_and_sort(self, tmp_path):
        spec = load_spec(None, {**SMALL, "policies": "reward_penalty,classic"})
        write_outputs(run_experiment(spec), tmp_path)
        with open(tmp_path / "finals.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        keys = [(r["policy"], int(r["replication"])) for r in rows]
        assert keys == sorted(keys)
        for r in rows:
            int(r["total_bits"])
            int(r["collisions"])
            assert 0.0 <= float(r["blocking_rate"]) <= 1.0
        with open(tmp_path / "curves.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        keys = [(r["policy"], int(r["slot"])) for r in rows]
        assert keys == sorted(keys)

    def test_rewrite_identical_bytes(self, tmp_path):
        result = run_experiment(load_spec(None, SMALL))
        write_outputs(result, tmp_path / "a")
        write_outputs(result, tmp_path / "b")
        for name in ("curves.csv", "finals.csv", "summary.txt"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_rerun_identical_bytes(self, tmp_path):
        spec = load_spec(None, {**SMALL, "num_slots": 50})
        write_outputs(run_experiment(spec), tmp_path / "a")
        write_outputs(run_experiment(spec), tmp_path / "b")
        for name in ("curves.csv", "finals.csv", "summary.txt"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_timing_is_opt_in(self, tmp_path):
        spec = load_spec(None, {**SMALL, "timing": "true"})
        write_outputs(run_experiment(spec), tmp_path)
        with open(tmp_path / "finals.csv", newline="") as fh:
            runtimes = [float(r["runtime_s"]) for r in csv.DictReader(fh)]
        assert all(t >= 0 for t in runtimes)
        assert "runtime_s=" in (tmp_path / "summary.txt").read_text()

    def test_unwritable(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError):
            write_outputs(run_experiment(load_spec(None, SMALL)), blocker / "sub")


class TestCli:
    def test_run(self, tmp_path, capsys):
        out = tmp_path / "out"
        code = main([
            "run", "--config", str(REFERENCE), "--replications", "2", "--seed", "5",
            "--policy", "classic", "--policy", "qmodel", "--out", str(out),
            "--set", "num_slots=20", "--set", "num_users=10",
        ])
        assert code == 0
        finals = (out / "finals.csv").read_text().splitlines()
        assert len(finals) == 1 + 4
        assert {line.split(",")[0] for line in finals[1:]} == {"classic", "qmodel"}
        assert "wrote" in capsys.readouterr().out

    def test_bad_config_exit_code(self, tmp_path, capsys):
        code = main(["run", "--config", str(tmp_path / "missing.cfg")])
        assert code != 0
        assert "config error" in capsys.readouterr().err

    def test_bad_override_exit_code(self, capsys):
        code = main(["run", "--config", str(REFERENCE), "--set", "reward_rate=1.5"])
        assert code != 0
        assert "reward_rate" in capsys.readouterr().err

    def test_malformed_set(self):
        with pytest.raises(SystemExit):
            main(["run", "--config", str(REFERENCE), "--set", "noequals"])
