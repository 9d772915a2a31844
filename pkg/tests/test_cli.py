"""Command line interface: exit codes and report content."""

from pathlib import Path

from nullq.cli import main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def cfg(name):
    return str(CONFIGS / f"{name}.yaml")


class TestAnalyze:
    def test_controllable_report(self, capsys):
        assert main(["analyze", cfg("controllable_2x2")]) == 0
        out = capsys.readouterr().out
        assert "rho* = 1" in out
        assert "resource pooling: True" in out
        assert "null-controllable" in out

    def test_uncontrollable_report(self, capsys):
        assert main(["analyze", cfg("uncontrollable_2x2")]) == 0
        out = capsys.readouterr().out
        assert "not null-controllable" in out

    def test_missing_config_fails_cleanly(self, capsys):
        assert main(["analyze", "configs/does_not_exist.yaml"]) == 1
        assert "error" in capsys.readouterr().err


class TestSimulate:
    def test_identity_check_passes(self, capsys, tmp_path):
        out_csv = tmp_path / "events.csv"
        rc = main([
            "simulate", cfg("controllable_2x2"),
            "-n", "50", "--horizon", "1.0", "--out", str(out_csv),
        ])
        assert rc == 0
        out = capsys.readouterr().out
        assert "representation residual" in out
        assert out_csv.exists()

    def test_three_station_network(self, capsys):
        rc = main([
            "simulate", cfg("two_class_three_station"),
            "-n", "50", "--horizon", "0.5",
        ])
        assert rc == 0


class TestSweep:
    def test_small_ladder_with_outputs(self, capsys, tmp_path):
        outdir = tmp_path / "sweep"
        rc = main([
            "sweep", cfg("controllable_2x2"),
            "-n", "30", "--epsilon", "0.25", "--horizon", "1.0",
            "--replications", "3", "--out", str(outdir),
        ])
        assert rc == 0
        out = capsys.readouterr().out
        assert "p_hat" in out
        assert (outdir / "sweep_preemptive.csv").exists()
        assert (outdir / "manifest.yaml").exists()

    def test_refuses_uncontrollable(self, capsys):
        rc = main([
            "sweep", cfg("uncontrollable_2x2"),
            "-n", "30", "--replications", "2", "--horizon", "1.0",
            "--epsilon", "0.25",
        ])
        assert rc == 1
        assert "not null-controllable" in capsys.readouterr().err


class TestOverload:
    def test_small_overload_run(self, capsys):
        rc = main([
            "overload", cfg("controllable_2x2"),
            "-n", "50", "--times", "1.0", "2.0", "--replications", "2",
            "--factor", "1.2",
        ])
        assert rc == 0
        out = capsys.readouterr().out
        assert "median growth slope" in out

    def test_deflation_rejected(self, capsys):
        rc = main([
            "overload", cfg("controllable_2x2"),
            "-n", "50", "--times", "1.0", "--replications", "2",
            "--factor", "0.9",
        ])
        assert rc == 1


class TestDiffusion:
    def test_path_generation(self, capsys, tmp_path):
        out_csv = tmp_path / "path.csv"
        rc = main([
            "diffusion", cfg("controllable_2x2"),
            "--dt", "0.01", "--horizon", "1.0", "--out", str(out_csv),
        ])
        assert rc == 0
        out = capsys.readouterr().out
        assert "max e.X over grid" in out
        assert out_csv.read_text().startswith("time,X0,X1,eta")

    def test_uncontrollable_rejected(self, capsys):
        rc = main(["diffusion", cfg("uncontrollable_2x2"), "--horizon", "1.0"])
        assert rc == 1
        assert "not null-controllable" in capsys.readouterr().err
