"""Tests for the cli module - CSV ingestion, output formats and exit codes."""

import json

import numpy as np
import pytest

from effqr.cli import INTERCEPT, RunConfig, fit_rows, format_fit, ingest_csv, main, write_atomic
from effqr.errors import EmptyDataError, MissingColumnError, ParseError

from tests.conftest import write_csv


def _fit_args(csv_path, *extra):
    return ["fit", "--input", str(csv_path), "--covariates", "x2", *extra]


class TestIngestCsv:
    """Tests for CSV ingestion."""

    @pytest.mark.unit
    def test_reads_columns_with_intercept(self, simple_csv):
        result = ingest_csv(simple_csv, RunConfig(subcommand="fit", covariates=("x",)))

        assert result.column_names == (INTERCEPT, "x")
        np.testing.assert_array_equal(result.dataset.y, [1.5, 2.5, 3.0])
        np.testing.assert_array_equal(result.dataset.x[:, 0], 1.0)
        np.testing.assert_array_equal(result.dataset.x[:, 1], [1.0, 2.0, 4.0])
        assert result.rejected_rows == 0

    @pytest.mark.unit
    def test_without_intercept(self, simple_csv):
        result = ingest_csv(simple_csv, RunConfig(subcommand="fit", covariates=("x",), intercept=False))

        assert result.column_names == ("x",)
        assert result.dataset.p == 1

    @pytest.mark.unit
    def test_log_transform(self, simple_csv):
        config = RunConfig(subcommand="fit", covariates=("x",), log_columns=("y", "x"))

        result = ingest_csv(simple_csv, config)

        np.testing.assert_allclose(result.dataset.y, np.log([1.5, 2.5, 3.0]))
        np.testing.assert_allclose(result.dataset.x[:, 1], np.log([1.0, 2.0, 4.0]))

    @pytest.mark.unit
    def test_rejects_rows_outside_log_domain(self, tmp_path):
        path = write_csv(tmp_path / "d.csv", ["y", "x"], [[1, 1], [2, 0], [3, -2], [4, 5]])
        config = RunConfig(subcommand="fit", covariates=("x",), log_columns=("x",))

        result = ingest_csv(path, config)

        assert result.rejected_rows == 2
        np.testing.assert_array_equal(result.dataset.y, [1.0, 4.0])

    @pytest.mark.unit
    def test_drops_non_finite_rows(self, tmp_path):
        path = write_csv(tmp_path / "d.csv", ["y", "x"], [[1, 1], ["nan", 2], [3, "inf"], [4, 5]])

        result = ingest_csv(path, RunConfig(subcommand="fit", covariates=("x",)))

        assert result.rejected_rows == 2
        assert result.dataset.n == 2

    @pytest.mark.unit
    def test_missing_column(self, simple_csv):
        with pytest.raises(MissingColumnError) as exc_info:
            ingest_csv(simple_csv, RunConfig(subcommand="fit", covariates=("age",)))

        assert exc_info.value.column == "age"
        assert "'age'" in str(exc_info.value)

    @pytest.mark.unit
    def test_unparseable_cell(self, tmp_path):
        path = write_csv(tmp_path / "d.csv", ["y", "x"], [[1, 1], [2, "abc"], [3, 3]])

        with pytest.raises(ParseError) as exc_info:
            ingest_csv(path, RunConfig(subcommand="fit", covariates=("x",)))

        assert exc_info.value.line == 3
        assert exc_info.value.column == "x"

    @pytest.mark.unit
    def test_header_only(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("y,x\n", encoding="utf-8")

        with pytest.raises(EmptyDataError):
            ingest_csv(path, RunConfig(subcommand="fit", covariates=("x",)))

    @pytest.mark.unit
    def test_every_row_rejected(self, tmp_path):
        path = write_csv(tmp_path / "d.csv", ["y", "x"], [[1, -1], [2, 0]])
        config = RunConfig(subcommand="fit", covariates=("x",), log_columns=("x",))

        with pytest.raises(EmptyDataError):
            ingest_csv(path, config)

    @pytest.mark.unit
    def test_ragged_row_reports_line(self, tmp_path):
        path = tmp_path / "ragged.csv"
        path.write_text("y,x\n1,1\n2,3,4\n", encoding="utf-8")

        with pytest.raises(ParseError) as exc_info:
            ingest_csv(path, RunConfig(subcommand="fit", covariates=("x",)))

        assert exc_info.value.line == 3
        assert exc_info.value.stage == "ingest"


class TestOutput:
    """Tests for result formatting and atomic writes."""

    @pytest.mark.unit
    def test_tsv_layout(self):
        est = np.arange(12, dtype=float).reshape(3, 2, 2)
        esd = np.full((3, 2, 2), 0.5)
        esd[0] = np.nan
        pv = np.full((3, 2, 2), 0.01)
        rows = fit_rows((0.5, 0.7), ("Intercept", "x"), est, esd, pv)

        lines = format_fit(rows, "tsv", {}).splitlines()

        assert lines[0] == "level\tcoefficient\testimator\tEst\tEsd\tp_value"
        assert len(lines) == 1 + 2 * 2 * 3
        assert lines[1].split("\t") == ["0.5", "Intercept", "TQE", "0.0000", "NA", "0.0100"]
        assert lines[3].split("\t")[:4] == ["0.5", "Intercept", "EFF", "8.0000"]

    @pytest.mark.unit
    def test_json_uses_null_for_missing(self):
        est = np.zeros((3, 1, 1))
        esd = np.array([np.nan, 1.0, 1.0]).reshape(3, 1, 1)
        rows = fit_rows((0.5,), ("x",), est, esd, esd)

        payload = json.loads(format_fit(rows, "json", {"seed": 1}))

        assert payload["seed"] == 1
        assert payload["rows"][0]["esd"] is None
        assert payload["rows"][1]["esd"] == 1.0

    @pytest.mark.unit
    def test_write_atomic_replaces_file(self, tmp_path):
        target = tmp_path / "out.tsv"
        target.write_text("old", encoding="utf-8")

        write_atomic(target, "new\n")

        assert target.read_text(encoding="utf-8") == "new\n"
        assert [p.name for p in tmp_path.iterdir()] == ["out.tsv"]

    @pytest.mark.unit
    def test_write_atomic_stdout(self, capsys):
        write_atomic(None, "hello\n")

        assert capsys.readouterr().out == "hello\n"


class TestMain:
    """Tests for the command-line entry point."""

    @pytest.mark.unit
    def test_fit_asymptotic(self, m1_csv, tmp_path, clear_env):
        out = tmp_path / "fit.tsv"

        code = main(_fit_args(m1_csv, "--levels", "0.5,0.7", "--se", "asymptotic", "-o", str(out)))

        lines = out.read_text(encoding="utf-8").splitlines()
        assert code == 0
        assert len(lines) == 13
        assert lines[1].startswith("0.5\tIntercept\tTQE\t")
        assert lines[1].split("\t")[4] == "NA"
        assert lines[3].split("\t")[4] != "NA"

    @pytest.mark.unit
    def test_fit_bootstrap_is_byte_identical(self, m1_csv, tmp_path, clear_env):
        outputs = []
        for name, jobs in (("a.tsv", "1"), ("b.tsv", "2")):
            out = tmp_path / name
            args = _fit_args(m1_csv, "--replications", "4", "--seed", "3", "--jobs", jobs, "-o", str(out))
            assert main(args) == 0
            outputs.append(out.read_bytes())

        assert outputs[0] == outputs[1]

    @pytest.mark.unit
    def test_fit_json_meta(self, m1_csv, tmp_path, clear_env):
        out = tmp_path / "fit.json"

        code = main(
            _fit_args(m1_csv, "--se", "asymptotic", "--log", "x2", "--format", "json", "-o", str(out))
        )

        payload = json.loads(out.read_text(encoding="utf-8"))
        assert code == 0
        assert payload["coefficients"] == [INTERCEPT, "x2"]
        assert payload["se_method"] == "asymptotic"
        assert payload["rejected_rows"] == 0
        assert payload["diagnostics"]["n"] == 600

    @pytest.mark.unit
    def test_fit_to_stdout(self, m1_csv, capsys, clear_env):
        assert main(_fit_args(m1_csv, "--se", "asymptotic")) == 0

        assert capsys.readouterr().out.startswith("level\tcoefficient")

    @pytest.mark.unit
    def test_missing_column_exit_code(self, simple_csv, capsys):
        code = main(["fit", "-i", str(simple_csv), "--covariates", "x,age", "--se", "asymptotic"])

        assert code == 2
        assert "'age'" in capsys.readouterr().err

    @pytest.mark.unit
    def test_missing_input_file(self, tmp_path, capsys):
        code = main(["fit", "-i", str(tmp_path / "nope.csv"), "--covariates", "x"])

        assert code == 2
        assert "not found" in capsys.readouterr().err

    @pytest.mark.unit
    def test_single_row_exit_code(self, tmp_path, capsys):
        path = write_csv(tmp_path / "one.csv", ["y", "x2"], [[1.0, 2.0]])

        code = main(_fit_args(path, "--se", "asymptotic"))

        err = capsys.readouterr().err
        assert code == 2
        assert "effqr: error: [ingest]" in err
        assert "at least 2" in err

    @pytest.mark.unit
    def test_ragged_csv_exit_code(self, tmp_path, capsys):
        path = tmp_path / "ragged.csv"
        path.write_text("y,x2\n1,1\n2,3,4\n5,6\n", encoding="utf-8")

        code = main(_fit_args(path, "--se", "asymptotic"))

        err = capsys.readouterr().err
        assert code == 2
        assert "effqr: error: [ingest] Malformed CSV" in err

    @pytest.mark.unit
    def test_invalid_utf8_exit_code(self, tmp_path, capsys):
        path = tmp_path / "latin.csv"
        path.write_bytes(b"y,x2\n\xff\xfe,1\n2,3\n")

        code = main(_fit_args(path, "--se", "asymptotic"))

        err = capsys.readouterr().err
        assert code == 2
        assert "effqr: error: [ingest]" in err
        assert "UTF-8" in err

    @pytest.mark.unit
    def test_parse_error_reports_line(self, tmp_path, capsys):
        path = write_csv(tmp_path / "d.csv", ["y", "x2"], [[1, 1], [2, "oops"]])

        code = main(_fit_args(path, "--se", "asymptotic"))

        assert code == 2
        assert "line 3" in capsys.readouterr().err

    @pytest.mark.unit
    def test_bad_grid_is_data_error(self, simple_csv):
        code = main(["fit", "-i", str(simple_csv), "--covariates", "x", "--levels", "0.7,0.5"])

        assert code == 2

    @pytest.mark.unit
    @pytest.mark.parametrize(
        "argv",
        [
            [],
            ["fit", "--covariates", "x"],
            ["fit", "-i", "data.csv"],
            ["fit", "-i", "data.csv", "--covariates", "x", "--se", "jackknife"],
            ["fit", "-i", "data.csv", "--covariates", "x", "--levels", "a,b"],
            ["fit", "-i", "data.csv", "--covariates", "x", "--log", "z"],
            ["simulate"],
            ["bogus"],
        ],
    )
    def test_usage_errors(self, argv, capsys):
        assert main(argv) == 1
        assert "effqr: error:" in capsys.readouterr().err

    @pytest.mark.unit
    def test_numerical_failure_writes_nothing(self, tmp_path, capsys):
        rows = [[5.0, 1.0 + i % 7] for i in range(40)]
        path = write_csv(tmp_path / "flat.csv", ["y", "x2"], rows)
        out = tmp_path / "out.tsv"

        code = main(_fit_args(path, "--se", "asymptotic", "-o", str(out)))

        assert code == 3
        assert "[density]" in capsys.readouterr().err
        assert not out.exists()
        assert list(tmp_path.iterdir()) == [path]

    @pytest.mark.unit
    def test_simulate_is_byte_identical(self, tmp_path, clear_env):
        outputs = []
        for name in ("a.tsv", "b.tsv"):
            out = tmp_path / name
            args = ["simulate", "--model", "M1", "--n", "300", "--replications", "2", "--seed", "5", "-o", str(out)]
            assert main(args) == 0
            outputs.append(out.read_text(encoding="utf-8"))

        assert outputs[0] == outputs[1]
        assert outputs[0].splitlines()[1].startswith("M1\t300\tTrue\t2.0000\t1.0000")

    @pytest.mark.unit
    def test_simulate_from_config_file(self, tmp_path, clear_env):
        config = tmp_path / "m3.cfg"
        config.write_text("model = M3\nn = 300\nlevels = 0.5\nreplications = 2\nseed = 1\n", encoding="utf-8")
        out = tmp_path / "m3.json"

        code = main(["simulate", "--config", str(config), "--format", "json", "-o", str(out)])

        payload = json.loads(out.read_text(encoding="utf-8"))
        assert code == 0
        assert payload["model"] == "M3"
        assert payload["levels"] == [0.5]
        assert payload["replications"] == 2

    @pytest.mark.unit
    def test_simulate_unknown_model(self, capsys):
        assert main(["simulate", "--model", "M9", "--n", "100"]) == 2

    @pytest.mark.unit
    def test_selftest(self, tmp_path, clear_env):
        out = tmp_path / "selftest.tsv"

        code = main(["selftest", "--seed", "0", "-o", str(out)])

        lines = out.read_text(encoding="utf-8").splitlines()
        assert code == 0
        assert lines[0] == "check\tinstance\tdiscrepancy\ttolerance\tstatus"
        assert all(line.endswith("pass") for line in lines[1:])
