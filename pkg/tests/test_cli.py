import csv
import io
import subprocess
import sys
import time

import numpy as np
import pytest

from lfdrmm import __version__
from lfdrmm.cli import main
from lfdrmm.ingest import read_report
from lfdrmm.mixture import DecisionConfig, threshold_hu

SIM_SMOKE = ["simulate1", "--n-total", "1000", "-b", "2"]


@pytest.fixture
def gwas(tmp_path):
    rng = np.random.default_rng(0)
    n = 3000
    beta = rng.normal(0, 0.05, n)
    beta[:300] += 0.2
    se = np.full(n, 0.05)
    path = tmp_path / "gwas.tsv"
    lines = ["snp\tbeta\tse"] + [f"rs{i}\t{b!r}\t{s!r}" for i, (b, s) in enumerate(zip(beta.tolist(), se.tolist()))]
    path.write_text("\n".join(lines) + "\n")
    return path


def fit_args(path, out, *extra):
    return ["fit", "--input", str(path), "--id-col", "snp", "--beta-col", "beta",
            "--se-col", "se", "--output", str(out), *extra]


class TestExitCodes:
    def test_empty_file_is_config_error(self, tmp_path):
        empty = tmp_path / "empty.tsv"
        empty.write_text("")
        assert main(fit_args(empty, tmp_path / "o.csv")) == 1

    def test_missing_file_is_io_error(self, tmp_path):
        assert main(fit_args(tmp_path / "nope.tsv", tmp_path / "o.csv")) == 2

    def test_nonpositive_statistic_is_domain_error(self, tmp_path):
        path = tmp_path / "neg.tsv"
        path.write_text("x\n-1.0\n2.0\n")
        code = main(["fit", "--input", str(path), "--kind", "chisq", "--value-col", "x",
                     "--output", str(tmp_path / "o.csv")])
        assert code == 3

    def test_unknown_flag(self):
        assert main(["fit", "--bogus"]) == 1

    def test_bench_zero(self):
        assert main(["bench", "--n", "0"]) == 1

    def test_u_and_losses_exclusive(self, gwas, tmp_path):
        assert main(fit_args(gwas, tmp_path / "o.csv", "--u", "0.2", "--losses", "4", "1")) == 1

    def test_bad_u(self, gwas, tmp_path):
        assert main(fit_args(gwas, tmp_path / "o.csv", "--u", "1.5")) == 1

    def test_ml_needs_upper_bound(self, gwas, tmp_path):
        assert main(fit_args(gwas, tmp_path / "o.csv", "--method", "ml")) == 1

    def test_unwritable_output(self, gwas, tmp_path):
        assert main(fit_args(gwas, tmp_path / "no" / "o.csv")) == 2

    def test_version(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        assert __version__ in capsys.readouterr().out


class TestFit:
    def test_mm_report(self, gwas, tmp_path, capsys):
        out = tmp_path / "o.csv"
        assert main(fit_args(gwas, out, "--u", "0.05")) == 0
        rep = read_report(out)
        assert len(rep.ids) == 3000 and rep.ids[0] == "rs0"
        assert rep.h_u == threshold_hu(rep.params, DecisionConfig(0.05))
        err = capsys.readouterr().err
        assert "pi0_hat=" in err and "rejections=" in err

    def test_u_vs_losses(self, gwas, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(fit_args(gwas, a, "--u", "0.2")) == 0
        assert main(fit_args(gwas, b, "--losses", "4", "1")) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_ml(self, gwas, tmp_path):
        out = tmp_path / "ml.csv"
        assert main(fit_args(gwas, out, "--method", "ml", "--ml-d", "30",
                             "--ml-grid", "21", "31")) == 0
        rep = read_report(out)
        assert rep.method == "ml" and rep.loglik is not None

    def test_bh(self, gwas, tmp_path):
        out = tmp_path / "bh.csv"
        assert main(fit_args(gwas, out, "--method", "bh", "--alpha", "0.05")) == 0
        text = out.read_text()
        assert text.startswith("# method: bh")
        rows = list(csv.reader(line for line in text.splitlines() if not line.startswith("#")))
        assert rows[0] == ["id", "x", "p", "reject"] and len(rows) == 3001

    def test_decide_rewrites_threshold(self, gwas, tmp_path):
        first, second = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(fit_args(gwas, first, "--u", "0.2")) == 0
        assert main(["decide", "--report", str(first), "--output", str(second), "--u", "0.01"]) == 0
        a, b = read_report(first), read_report(second)
        assert b.u == 0.01 and b.rejections <= a.rejections
        assert np.array_equal(a.lfdr_hat, b.lfdr_hat)
        assert b.h_u == threshold_hu(b.params, DecisionConfig(0.01))

    @pytest.mark.parametrize("threads", ["4", "8"])
    def test_thread_independent(self, gwas, tmp_path, threads):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(fit_args(gwas, a, "--threads", "1")) == 0
        assert main(fit_args(gwas, b, "--threads", threads)) == 0
        assert a.read_bytes() == b.read_bytes()


class TestConvert:
    def test_t_to_chisq(self, tmp_path, capsys):
        path = tmp_path / "t.csv"
        path.write_text("gene,t\ng1,0\ng2,2.5\n")
        out = tmp_path / "x.tsv"
        code = main(["convert", "--input", str(path), "--delimiter", "comma", "--kind", "t",
                     "--id-col", "gene", "--value-col", "t", "--df", "100", "--output", str(out)])
        assert code == 0
        rows = [line.split("\t") for line in out.read_text().splitlines()]
        assert rows[0] == ["id", "x"] and rows[1] == ["g1", "1e-12"]
        assert "1 zeros floored" in capsys.readouterr().err

    def test_unknown_delimiter(self, gwas):
        assert main(["convert", "--input", str(gwas), "--delimiter", "pipe",
                     "--beta-col", "beta", "--se-col", "se"]) == 1


class TestSimulate:
    def test_smoke_budget(self, tmp_path):
        start = time.perf_counter()
        assert main(SIM_SMOKE + ["--output", str(tmp_path / "s.csv")]) == 0
        assert time.perf_counter() - start < 1.0

    def test_default_sweep(self, tmp_path):
        out = tmp_path / "s.csv"
        assert main(SIM_SMOKE + ["--methods", "mm", "--output", str(out)]) == 0
        rows = list(csv.DictReader(io.StringIO(out.read_text())))
        assert [float(r["pi0_true"]) for r in rows] == [0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5,
                                                       0.6, 0.7, 0.8, 0.9, 0.95, 1.0]

    def test_same_seed_same_csv(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(SIM_SMOKE + ["--seed", "7", "--output", str(a)]) == 0
        assert main(SIM_SMOKE + ["--seed", "7", "--output", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_threads(self, tmp_path):
        outs = []
        for t in ("1", "4", "8"):
            out = tmp_path / f"s{t}.csv"
            assert main(SIM_SMOKE + ["--seed", "3", "--threads", t, "--output", str(out)]) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1] == outs[2]

    def test_simulate2(self, tmp_path):
        out = tmp_path / "s2.csv"
        assert main(["simulate2", "--n-total", "500", "-b", "2", "--cases", "500",
                     "--controls", "1000", "--pi0", "0.9", "--output", str(out)]) == 0
        rows = list(csv.DictReader(io.StringIO(out.read_text())))
        assert [r["method"] for r in rows] == ["MM", "BH"]
        assert rows[0]["mse_lambda"] == "NA"

    def test_random_or(self, tmp_path):
        out = tmp_path / "r.csv"
        assert main(SIM_SMOKE + ["--pi0", "0.95", "--random-or", "1.5", "0.1",
                                 "--output", str(out)]) == 0
        assert list(csv.DictReader(io.StringIO(out.read_text())))[0]["mse_lambda"] == "NA"

    def test_bad_pi0(self):
        assert main(SIM_SMOKE + ["--pi0", "1.2"]) == 1

    def test_ml_requires_bound(self):
        assert main(SIM_SMOKE + ["--methods", "mm,ml"]) == 1

    def test_stdout(self, capsys):
        assert main(SIM_SMOKE + ["--pi0", "0.9", "--methods", "mm"]) == 0
        assert capsys.readouterr().out.startswith("method,pi0_true")


class TestConfigFile:
    def test_config_supplies_flags(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# smoke run\nn-total = 1000\nreplicates = 2\nseed = 7\npi0 = 0.5,0.9\n")
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(["--config", str(cfg), "simulate1", "--output", str(a)]) == 0
        assert main(SIM_SMOKE + ["--seed", "7", "--pi0", "0.5,0.9", "--output", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_command_line_wins(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("n_total = 1000\nreplicates = 2\nseed = 1\npi0 = 0.9\n")
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(["--config", str(cfg), "simulate1", "--seed", "7", "--output", str(a)]) == 0
        assert main(SIM_SMOKE + ["--seed", "7", "--pi0", "0.9", "--output", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_unknown_key(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("colour = blue\n")
        assert main(["--config", str(cfg), *SIM_SMOKE]) == 1

    def test_missing_config(self, tmp_path):
        assert main(["--config", str(tmp_path / "none.cfg"), *SIM_SMOKE]) == 2


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "lfdrmm.cli", "bench", "--n", "1000"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.startswith("fit_mm\tn=1000")
