import csv
import subprocess
import sys

import pytest

from bioconv import cli, postproc


def make_record(N=100, h=0.5, with_errors=True, with_rates=False):
    rec = postproc.ErrorRecord(N=N, h=h, iterations=4)
    if with_errors:
        for key in rec.ERROR_KEYS:
            setattr(rec, f"e_{key}", 0.123456789e-2)
    if with_rates:
        for key in rec.ERROR_KEYS:
            setattr(rec, f"r_{key}", 1.987654321)
    rec.theta = 3.14159265e-1
    rec.eff = 0.35
    return rec


class TestConfig:
    def test_defaults(self):
        cfg = cli.parse_config()
        assert cfg.problem == "example1"
        assert cfg.degree == 1

    def test_file_and_overrides(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("problem = example2\ndegree = 2\n# comment\nlevels=3\n")
        cfg = cli.parse_config(p, ["degree=1", "dorfler_theta=0.2"])
        assert cfg.problem == "example2"
        assert cfg.degree == 1
        assert cfg.levels == 3
        assert cfg.dorfler_theta == pytest.approx(0.2)

    def test_unknown_key_rejected(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("probelm = example1\n")
        with pytest.raises(cli.ConfigError):
            cli.parse_config(p)
        with pytest.raises(cli.ConfigError):
            cli.parse_config(None, ["degre=2"])

    def test_validation(self):
        with pytest.raises(cli.ConfigError):
            cli.parse_config(None, ["levels=0"])
        with pytest.raises(cli.ConfigError):
            cli.parse_config(None, ["mode=bogus"])


class TestWriteCsv:
    def test_header_only(self, tmp_path):
        path = tmp_path / "empty.csv"
        cli.write_csv([], path)
        lines = path.read_text().strip().splitlines()
        assert lines == [",".join(cli.CSV_HEADER)]

    def test_roundtrip_precision(self, tmp_path):
        path = tmp_path / "one.csv"
        rec = make_record(with_rates=True)
        cli.write_csv([rec], path)
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 1
        row = rows[0]
        assert int(row["N"]) == 100
        assert row["e_u"] == f"{rec.e_u:.5e}"
        assert float(row["r_phi"]) == pytest.approx(rec.r_phi, rel=1e-5)
        assert int(row["it"]) == 4

    def test_missing_rates_empty_fields(self, tmp_path):
        path = tmp_path / "norates.csv"
        cli.write_csv([make_record()], path)
        with open(path, newline="") as fh:
            row = next(csv.DictReader(fh))
        assert row["r_u"] == ""
        assert row["e_u"] != ""


class TestRunners:
    def test_uniform_two_levels(self, tmp_path):
        cfg = cli.parse_config(None, ["problem=example1", "levels=2"])
        records, ok = cli.run_uniform(cfg)
        assert ok and len(records) == 2
        assert records[0].N == 962
        assert records[1].N == 3794
        assert records[1].r_u is not None
        out = tmp_path / "table.csv"
        cli.write_csv(records, out)
        assert out.exists()

    def test_single_solve(self):
        cfg = cli.parse_config(None, ["problem=patch-constant",
                                      "mode=single-solve"])
        records, ok = cli.run_single(cfg)
        assert ok and len(records) == 1
        assert records[0].e_tot() < 1e-9

    def test_adaptive_short(self):
        cfg = cli.parse_config(None, ["problem=example1", "levels=2",
                                      "mode=adaptive"])
        records, ok = cli.run_adaptive(cfg)
        assert ok and len(records) == 2
        assert records[1].N > records[0].N

    def test_degree_guard(self):
        cfg = cli.parse_config(None, ["problem=patch-rotation", "levels=1"])
        with pytest.raises(cli.ConfigError):
            cli.run_uniform(cfg)


class TestMain:
    def test_check_verb(self, capsys):
        assert cli.main(["check"]) == 0
        out = capsys.readouterr().out
        assert "quadrature exactness: PASS" in out
        assert "patch test estimator: PASS" in out

    def test_converge_writes_csv(self, tmp_path, capsys):
        out = tmp_path / "run.csv"
        code = cli.main(["converge", "--out", str(out),
                         "problem=patch-constant", "levels=1"])
        assert code == 0
        assert out.exists()
        text = capsys.readouterr().out
        assert "wrote" in text

    def test_bad_override_exit_code(self):
        assert cli.main(["converge", "nonsense=1"]) == 2

    def test_subprocess_entrypoint(self, tmp_path):
        out = tmp_path / "cli.csv"
        proc = subprocess.run(
            [sys.executable, "-m", "bioconv.cli", "solve", "--out", str(out),
             "problem=patch-constant", "--deterministic"],
            capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        assert out.exists()


class TestDeterminism:
    def test_two_runs_byte_identical(self, tmp_path):
        outputs = []
        for tag in ("a", "b"):
            out = tmp_path / f"det-{tag}.csv"
            proc = subprocess.run(
                [sys.executable, "-m", "bioconv.cli", "converge",
                 "--deterministic", "--out", str(out),
                 "problem=example1", "levels=2"],
                capture_output=True, text=True)
            assert proc.returncode == 0, proc.stderr
            outputs.append(out.read_bytes())
        assert outputs[0] == outputs[1]
