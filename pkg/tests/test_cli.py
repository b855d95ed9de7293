import csv
import subprocess
import sys

import numpy as np
import pytest

from drem_observer.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_FAULT, EXIT_OK, main
from drem_observer.model import SCENARIO_NAMES
from drem_observer.traceio import TRACE_MAGIC, read_trace_csv

S1_FLAGS = ["--scenario", "S1", "--observer", "prop1", "--lambda", "1", "--kappa", "1", "--dt", "0.001"]


def summary_values(text):
    out = {}
    for line in text.splitlines():
        if "=" in line and not line.startswith(" "):
            k, _, v = line.partition("=")
            out[k] = v
    return out


class TestSimulate:
    def test_s1_smoke(self, tmp_path, capsys, reference):
        out = tmp_path / "s1.csv"
        code = main(["simulate", *S1_FLAGS, "--tfinal", "50", "--out", str(out)])
        assert code == EXIT_OK
        lines = out.read_text().splitlines()
        assert lines[0] == TRACE_MAGIC
        header = next(l for l in lines if not l.startswith("#"))
        assert header.startswith("t,x_1,")
        assert (tmp_path / "s1.csv.summary.txt").exists()
        assert (tmp_path / "s1.png").stat().st_size > 1000
        tr = read_trace_csv(out)
        assert tr.theta_hat[-1] == pytest.approx(reference["S1_prop1_lambda1_kappa1"]["theta_hat_T"], abs=1e-9)
        vals = summary_values(capsys.readouterr().out)
        assert vals["status"] == "ok" and vals["pe"] == "PASS"

    def test_bogus_scenario(self, tmp_path, capsys):
        code = main(["simulate", "--scenario", "bogus", "--out", str(tmp_path / "x.csv")])
        assert code == EXIT_CONFIG
        err = capsys.readouterr().err
        assert all(n in err for n in SCENARIO_NAMES)

    def test_kappa_fail_is_reported_but_run_completes(self, tmp_path, capsys):
        out = tmp_path / "s3.csv"
        code = main(["simulate", "--scenario", "S3", "--observer", "prop2", "--rho", "100", "--kappa", "0.1",
                     "--tfinal", "5", "--out", str(out), "--no-figure"])
        text = capsys.readouterr().out
        assert code == EXIT_OK and out.exists()
        assert "kappa bound FAIL" in text
        vals = summary_values(text)
        assert float(vals["kappa_margin"]) == pytest.approx(0.1 - 100 * 0.25 * 0.25)

    def test_divergent_run_exit_2(self, tmp_path, capsys):
        cfg = tmp_path / "div.yaml"
        cfg.write_text(
            "schema_version: 1\n"
            "scenario: {dims: {n_x: 1, n_u: 1, n_y: 1, p: 1}, A: [[1.0]], Omega: {u1: [[1.0]]}, C: [[1.0]],\n"
            "  Gamma: [[3.0]], P: [[1.0]], theta_true: [2.0], x0: [1.0], input: [[{kind: sin, freq: 1}]], t_final: 30}\n"
        )
        out = tmp_path / "div.csv"
        code = main(["simulate", "--config", str(cfg), "--out", str(out), "--no-figure"])
        assert code == EXIT_FAULT
        assert "status=divergence guard" in capsys.readouterr().out
        assert read_trace_csv(out).t[-1] < 30

    def test_flags_override_config(self, tmp_path, capsys):
        cfg = tmp_path / "c.yaml"
        cfg.write_text("schema_version: 1\nscenario: S1\nobserver: {kappa: 2.0}\nsim: {t_final: 2}\n")
        out = tmp_path / "o.csv"
        assert main(["simulate", "--config", str(cfg), "--kappa", "3", "--zhat0", "-1", "--out", str(out), "--no-figure"]) == 0
        tr = read_trace_csv(out)
        assert tr.meta["kappa"] == "3.0" and tr.zbar[0, 0] == pytest.approx(2.0)

    @pytest.mark.parametrize("argv", [
        ["simulate", "--scenario", "S1"],
        ["simulate", "--out", "x.csv"],
        ["simulate", "--scenario", "S1", "--dt", "abc", "--out", "x.csv"],
        ["simulate", "--scenario", "S1", "--dt", "0.5", "--out", "x.csv"],
        ["simulate", "--scenario", "S1", "--zhat0", "1,2", "--out", "x.csv"],
        ["simulate", "--scenario", "S1", "--lambda", "0", "--out", "x.csv"],
        ["frobnicate"],
        [],
    ])
    def test_usage_errors(self, tmp_path, monkeypatch, argv):
        monkeypatch.chdir(tmp_path)
        try:
            code = main(argv)
        except SystemExit as exc:
            code = exc.code
        assert code == EXIT_CONFIG

    def test_unwritable_output(self, tmp_path):
        code = main(["simulate", *S1_FLAGS, "--tfinal", "1", "--out", str(tmp_path / "no" / "dir.csv")])
        assert code == EXIT_CONFIG


class TestDeterminism:
    def test_identical_config_identical_bytes(self, tmp_path):
        cfg = tmp_path / "c.yaml"
        cfg.write_text("schema_version: 1\nscenario: S4\nobserver: {variant: prop2, rho: 1.0}\nsim: {t_final: 3}\n")
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for out in (a, b):
            assert main(["simulate", "--config", str(cfg), "--out", str(out), "--no-figure"]) == EXIT_OK
        assert a.read_bytes() == b.read_bytes()

    def test_csv_roundtrip_exact(self, tmp_path):
        from drem_observer import ObserverGains, builtin_scenario, run
        from drem_observer.sim import SimConfig
        from drem_observer.traceio import write_trace_csv

        tr = run(SimConfig(builtin_scenario("S4").replace(t_final=2.0), "prop2", ObserverGains(rho_gain=2.0)))
        write_trace_csv(tr, tmp_path / "t.csv")
        back = read_trace_csv(tmp_path / "t.csv")
        for f in ("t", "x", "xhat", "zbar", "theta_hat", "theta_tilde", "delta", "det_phi", "min_eig_phi", "eps",
                  "swap_residual", "V0"):
            assert np.array_equal(getattr(tr, f), getattr(back, f)), f
        assert back.meta["status"] == "ok" and back.meta["extra_columns"] == []


class TestCheckKappa:
    @pytest.mark.parametrize("argv, code, margin", [
        (["--kappa", "1", "--rho", "0", "--p", "3", "--psi-sup", "2"], EXIT_OK, 1.0),
        (["--kappa", "0.2", "--rho", "4", "--p", "1", "--psi-sup", "0.5"], EXIT_FAIL, -0.05),
        (["--kappa", "0.3", "--rho", "4", "--p", "1", "--psi-sup", "0.5"], EXIT_OK, 0.05),
    ])
    def test_cases(self, capsys, monkeypatch, argv, code, margin):
        monkeypatch.setenv("NO_COLOR", "1")
        assert main(["check-kappa", *argv]) == code
        out = capsys.readouterr().out
        assert out.startswith("PASS" if code == EXIT_OK else "FAIL")
        assert float(out.rsplit("margin=", 1)[1]) == pytest.approx(margin)

    def test_invalid_values(self):
        assert main(["check-kappa", "--kappa", "0", "--rho", "1", "--p", "1", "--psi-sup", "1"]) == EXIT_CONFIG


class TestSweepRho:
    def test_single_zero_row_matches_prop1(self, tmp_path, capsys):
        out = tmp_path / "sw.csv"
        code = main(["sweep-rho", "--scenario", "S1", "--zhat0", "-1", "--tfinal", "10", "--rho-list", "0",
                     "--out", str(out), "--no-figure"])
        assert code == EXIT_OK
        rows = list(csv.DictReader(out.open()))
        assert len(rows) == 1
        ref = tmp_path / "ref.csv"
        main(["simulate", "--scenario", "S1", "--zhat0", "-1", "--tfinal", "10", "--out", str(ref), "--no-figure"])
        tr = read_trace_csv(ref)
        assert float(rows[0]["final_theta_tilde"]) == float(np.linalg.norm(tr.theta_tilde[-1]))
        assert float(rows[0]["sup_eps"]) == float(np.linalg.norm(tr.eps, axis=1).max())

    def test_three_values_non_increasing(self, tmp_path, capsys):
        out = tmp_path / "sw.csv"
        code = main(["sweep-rho", "--scenario", "S1", "--zhat0", "-1", "--rho-list", "0,1,10", "--out", str(out)])
        assert code == EXIT_OK
        rows = list(csv.DictReader(out.open()))
        sup = [float(r["sup_eps"]) for r in rows]
        assert len(sup) == 3 and sup[0] >= sup[1] >= sup[2]
        assert (tmp_path / "sw.png").exists()

    @pytest.mark.parametrize("rho_list", ["", ",", "a,b", "-1"])
    def test_bad_lists(self, tmp_path, rho_list):
        code = main(["sweep-rho", "--scenario", "S1", "--zhat0", "-1", "--rho-list", rho_list,
                     "--out", str(tmp_path / "x.csv"), "--no-figure"])
        assert code == EXIT_CONFIG


@pytest.fixture(scope="module")
def trace_csv(tmp_path_factory):
    out = tmp_path_factory.mktemp("plot") / "s1.csv"
    assert main(["simulate", "--scenario", "S1", "--tfinal", "2", "--out", str(out), "--no-figure"]) == 0
    return out


class TestPlot:
    def test_script_uses_csv_columns(self, trace_csv, tmp_path):
        script = tmp_path / "p.gp"
        assert main(["plot", "--csv", str(trace_csv), "--out", str(script)]) == EXIT_OK
        text = script.read_text()
        header = [l for l in trace_csv.read_text().splitlines() if not l.startswith("#")][0].split(",")
        used = {part.split('"')[1] for part in text.split('column(')[1:]}
        assert used <= set(header)
        assert {"t", "delta", "V0", "thetatilde_1", "zbar_1"} <= used
        assert str(trace_csv) in text

    def test_png_option(self, trace_csv, tmp_path):
        png = tmp_path / "p.png"
        assert main(["plot", "--csv", str(trace_csv), "--out", str(tmp_path / "p.gp"), "--png", str(png)]) == 0
        assert png.stat().st_size > 1000

    def test_missing_file(self, tmp_path):
        assert main(["plot", "--csv", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "p.gp")]) == EXIT_CONFIG

    def test_malformed_header(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text(TRACE_MAGIC + "\nt,foo\n0,1\n")
        assert main(["plot", "--csv", str(bad), "--out", str(tmp_path / "p.gp")]) == EXIT_CONFIG

    def test_extra_columns_ignored(self, trace_csv, tmp_path):
        lines = trace_csv.read_text().splitlines()
        i = next(k for k, l in enumerate(lines) if not l.startswith("#"))
        lines[i] += ",user_note"
        lines[i + 1:] = [l + ",7" for l in lines[i + 1:]]
        extra = tmp_path / "extra.csv"
        extra.write_text("\n".join(lines) + "\n")
        script = tmp_path / "p.gp"
        assert main(["plot", "--csv", str(extra), "--out", str(script)]) == EXIT_OK
        assert "user_note" not in script.read_text()
        assert read_trace_csv(extra).meta["extra_columns"] == ["user_note"]


def test_list_scenarios(capsys):
    assert main(["list-scenarios"]) == EXIT_OK
    out = capsys.readouterr().out
    assert [l.split()[0] for l in out.splitlines()] == list(SCENARIO_NAMES)


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "drem_observer", "check-kappa", "--kappa", "0.2", "--rho", "4",
                          "--p", "1", "--psi-sup", "0.5"], capture_output=True, text=True, env={"NO_COLOR": "1"})
    assert res.returncode == EXIT_FAIL and res.stdout.startswith("FAIL")
