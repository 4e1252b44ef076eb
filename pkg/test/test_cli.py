import pytest

from ionlink import __version__
from ionlink.cli import EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, main, parse_int_list, parse_range
from ionlink.utils import NumericalInvariantError, QubitBudgetError

NOISELESS = ["--p1", "0", "--p2", "0", "--pm", "0"]


def run(args, path):
    code = main(args + ["-o", str(path)])
    return code, path.read_text() if path.exists() else ""


class TestRanges:
    """start:stop:step grids"""

    def test_stop_is_included(self):
        assert parse_range("0.13:0.20:0.01") == [0.13, 0.14, 0.15, 0.16, 0.17, 0.18, 0.19, 0.2]
        assert len(parse_range("0.01:0.15:0.01")) == 15
        assert parse_range("0.1:0.1:0.01") == [0.1]

    def test_lists(self):
        assert parse_range("0.1,0.2") == [0.1, 0.2]
        assert parse_range([0.1, 0.3]) == [0.1, 0.3]
        assert parse_int_list("8,12,16") == [8, 12, 16]

    @pytest.mark.parametrize("text", ["0.2:0.1:0.01", "0.1:0.2:0", "0.1:0.2"])
    def test_invalid(self, text):
        with pytest.raises(ValueError):
            parse_range(text)


class TestCommands:
    """Subcommands write self-describing, reproducible outputs"""

    def test_table_dump_zero_noise(self, temp_dir):
        code, text = run(["table-dump", "--eps", "0", *NOISELESS], temp_dir / "table.txt")
        assert code == EXIT_OK
        lines = text.splitlines()
        assert lines[0] == f"# ionlink {__version__}"
        assert lines[1] == "# command table-dump"
        assert "# pair_fidelity 1.000000000" in lines
        assert "# remote_cphase_process_fidelity 1.000000000" in lines
        assert not any(line.startswith("# dominant") for line in lines)
        assert lines[-1] == "IIII 0 1.00000000000e+00"

    def test_table_dump_is_byte_identical(self, temp_dir):
        args = ["table-dump", "--method", "a", "--level", "1", "--basis", "X"]
        _, first = run(args, temp_dir / "a.txt")
        _, second = run(args, temp_dir / "b.txt")
        assert first == second
        assert "# basis X" in first

    def test_purify_sweep(self, temp_dir):
        args = ["purify-sweep", "--levels", "1,3", "--eps", "0.05:0.1:0.05", "--trials", "500",
                "--seed", "7", "--workers", "1"]
        code, text = run(args, temp_dir / "sweep.csv")
        assert code == EXIT_OK
        rows = [line for line in text.splitlines() if not line.startswith("#")]
        assert rows[0] == "epsilon,level,infidelity,mean_raw_pairs,mean_time_T0,stderr"
        assert len(rows) == 1 + 2 * 2
        assert rows[1].startswith("0.05,1,")
        assert "# seed 7" in text
        _, again = run(args, temp_dir / "sweep2.csv")
        assert again == text
        print("✅ purify-sweep reproducible")

    def test_repeater_single_stage(self, temp_dir):
        code, text = run(["repeater", "--chain", "1", "--spacing-km", "17"], temp_dir / "chain.csv")
        assert code == EXIT_OK
        rows = [line.split(",") for line in text.splitlines() if not line.startswith("#")]
        assert rows[0] == ["section", "label", "quantity", "value"]
        stages = {row[1] for row in rows if row[0] == "stage"}
        assert stages == {"i"}
        rate = next(float(row[3]) for row in rows if row[2] == "max_cycle_rate_hz")
        assert rate == pytest.approx(18e3, rel=0.1)

    def test_repeater_reports_words_and_link_memory(self, temp_dir):
        code, text = run(["repeater", "--chain", "2", "--pm", "0"], temp_dir / "tier.csv")
        assert code == EXIT_OK
        rows = [line.split(",") for line in text.splitlines() if not line.startswith("#")]
        assert {row[1] for row in rows if row[0] == "stage"} == {"i", "ii", "iii"}
        (words,) = [row for row in rows if row[0] == "steering"]
        assert words[1:3] == ["iii", "words"]
        assert len(words[3].split()) == 2
        memory = {row[2]: float(row[3]) for row in rows if row[:2] == ["budget", "memory"]}
        link_cost = next(float(row[3]) for row in rows if row[:3] == ["cost", "i", "raw_pairs"])
        assert memory["min_rate_hz"] == pytest.approx(link_cost / memory["window_s"], rel=1e-6)

    def test_threshold_tiny_run(self, temp_dir):
        args = ["threshold", "--method", "a", "--level", "1", "--L", "3,4", "--trials", "1",
                "--eps", "0.1,0.12", "--workers", "1", "--seed", "3"]
        code, text = run(args, temp_dir / "threshold.csv")
        assert code == EXIT_OK
        rows = [line for line in text.splitlines() if not line.startswith("#")]
        assert rows[0] == "epsilon,L,trials,failures,rate,stderr"
        assert len(rows) == 1 + 4
        assert any(line.startswith("# crossing") or line.startswith("# warning") for line in text.splitlines())

    def test_stdout_output(self, capsys):
        assert main(["table-dump", "--eps", "0", *NOISELESS]) == EXIT_OK
        assert capsys.readouterr().out.startswith("# ionlink")


class TestConfiguration:
    """Config files, environment seed and exit codes"""

    def test_config_file_overrides_flags(self, temp_dir, config_file):
        path = config_file({"trials": 100, "levels": [1], "eps": "0.1:0.1:0.01"})
        code, text = run(["purify-sweep", "--config", str(path), "--workers", "1"], temp_dir / "out.csv")
        assert code == EXIT_OK
        assert '"trials": 100' in text
        assert '"levels": [1]' in text

    def test_unknown_config_key(self, temp_dir, config_file):
        path = config_file({"colour": "blue"})
        assert main(["table-dump", "--config", str(path), "-o", str(temp_dir / "x")]) == EXIT_USAGE

    def test_seed_from_environment(self, temp_dir, monkeypatch):
        monkeypatch.setenv("IONLINK_SEED", "99")
        _, text = run(["table-dump", "--eps", "0", *NOISELESS], temp_dir / "seed.txt")
        assert "# seed 99" in text

    @pytest.mark.parametrize("args", [
        ["bogus"],
        ["purify-sweep", "--levels", "5"],
        ["purify-sweep", "--eps", "0.2:0.1:0.01"],
        ["threshold", "--L", "4"],
        ["repeater", "--chain", "9"],
    ])
    def test_usage_errors(self, args, temp_dir):
        assert main(args + ["-o", str(temp_dir / "x")]) == EXIT_USAGE

    @pytest.mark.parametrize("error", [QubitBudgetError, NumericalInvariantError])
    def test_numerical_errors(self, error, temp_dir, monkeypatch):
        def fail(*args, **kwargs):
            raise error("forced")

        monkeypatch.setattr("ionlink.cli.build_table", fail)
        assert main(["table-dump", "-o", str(temp_dir / "x")]) == EXIT_NUMERICAL
