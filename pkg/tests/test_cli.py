"""Exit codes, CSV determinism, and manifest reruns of the study runner."""

import json

import numpy as np
import pytest

from boxqed.cli import main


def run(argv):
    return main(argv)


def read_manifest(out_dir):
    with open(out_dir / "manifest.json", "r", encoding="utf-8") as handle:
        return json.load(handle)


class TestVersionAndParsing:
    def test_version_flag_exits_cleanly(self, capsys):
        with pytest.raises(SystemExit) as info:
            run(["--version"])
        assert info.value.code == 0
        assert "boxqed 0.1.0" in capsys.readouterr().out

    def test_jobs_must_be_positive(self, tmp_path, capsys):
        code = run(["fock-spectrum", "--out", str(tmp_path), "--jobs", "0"])
        assert code == 2
        assert "jobs" in capsys.readouterr().err


class TestFockSpectrum:
    def test_one_mode_cap_two_levels(self, tmp_path):
        assert run(["fock-spectrum", "--out", str(tmp_path)]) == 0
        lines = (tmp_path / "fock_spectrum.csv").read_text().strip().splitlines()
        assert lines[0] == "energy,multiplicity"
        table = [line.split(",") for line in lines[1:]]
        energies = [float(a) for a, _ in table]
        counts = [int(b) for _, b in table]
        # |k| = 1 on the 2 pi box, so levels step by hbar c |k| = 1; the
        # multiplicities are those of four capped oscillators
        assert energies == [float(n) for n in range(9)]
        assert counts == [1, 4, 10, 16, 19, 16, 10, 4, 1]
        assert sum(counts) == 3**4


class TestModes:
    def test_counts_and_halving(self, tmp_path):
        assert run(["modes", "--out", str(tmp_path)]) == 0
        manifest = read_manifest(tmp_path)
        assert manifest["summary"] == {"N1": 13, "N2": 13, "N3": 13}
        lines = (tmp_path / "modes.csv").read_text().strip().splitlines()
        rows = [line.split(",") for line in lines[1:]]
        assert len(rows) == 26            # full set, 3^3 - 1 nonzero sites
        assert sum(row[-1] == "1" for row in rows) == 13


class TestDeterminism:
    def test_identical_runs_are_byte_identical(self, tmp_path):
        args = ["residual", "--rho-list", "0.125,0.0625,0.03125"]
        assert run(args + ["--out", str(tmp_path / "a")]) == 0
        assert run(args + ["--out", str(tmp_path / "b")]) == 0
        first = (tmp_path / "a" / "residual.csv").read_bytes()
        second = (tmp_path / "b" / "residual.csv").read_bytes()
        assert first == second
        assert read_manifest(tmp_path / "a")["outputs"] \
            == read_manifest(tmp_path / "b")["outputs"]

    def test_jobs_do_not_change_bytes(self, tmp_path):
        args = ["residual", "--rho-list", "0.125,0.0625,0.03125"]
        assert run(args + ["--out", str(tmp_path / "serial")]) == 0
        assert run(args + ["--out", str(tmp_path / "pool"), "--jobs", "3"]) == 0
        assert (tmp_path / "serial" / "residual.csv").read_bytes() \
            == (tmp_path / "pool" / "residual.csv").read_bytes()

    def test_rerun_reproduces_and_detects_drift(self, tmp_path, capsys):
        out = tmp_path / "run"
        assert run(["g-equivalence", "--out", str(out)]) == 0
        manifest_path = out / "manifest.json"
        assert run(["rerun", "--manifest", str(manifest_path),
                    "--out", str(tmp_path / "replay")]) == 0
        replay = read_manifest(tmp_path / "replay")
        assert replay["outputs"] == read_manifest(out)["outputs"]
        # corrupt a recorded hash: the rerun must fail the invariant
        tampered = read_manifest(out)
        tampered["outputs"]["g_equivalence.csv"] = "0" * 64
        broken = tmp_path / "broken.json"
        broken.write_text(json.dumps(tampered))
        capsys.readouterr()
        code = run(["rerun", "--manifest", str(broken),
                    "--out", str(tmp_path / "replay2")])
        assert code == 4
        assert "differ" in capsys.readouterr().err


class TestExitCodes:
    def test_cutoff_constraint_names_the_rule(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("M1 = 1\nM2 = 2\nM3 = 1\n")
        code = run(["modes", "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert code == 2
        assert "M2 <= M3" in capsys.readouterr().err

    def test_budget_exhaustion(self, tmp_path, capsys):
        cfg = tmp_path / "coupled.cfg"
        cfg.write_text("n_particles = 1\nmasses = 1.0\ncharges = 0.9\n"
                       "sigma_psi = 1e6\n")
        code = run(["propagate", "--backend", "galerkin", "--config", str(cfg),
                    "--cap", "6", "--segments", "1",
                    "--out", str(tmp_path / "o")])
        assert code == 3
        assert "budget" in capsys.readouterr().err.lower()

    def test_analytic_propagate_is_field_only(self, tmp_path, capsys):
        cfg = tmp_path / "coupled.cfg"
        cfg.write_text("n_particles = 1\nmasses = 1.0\ncharges = 0.9\n")
        code = run(["propagate", "--config", str(cfg),
                    "--out", str(tmp_path / "o")])
        assert code == 2
        assert "field-only" in capsys.readouterr().err


class TestStudyOutputs:
    def test_propagate_summary_reports_convergence(self, tmp_path):
        assert run(["propagate", "--segments", "4,8,16",
                    "--out", str(tmp_path)]) == 0
        summary = read_manifest(tmp_path)["summary"]
        assert summary["monotone"] is True
        assert min(summary["orders"]) >= 0.9
        assert summary["growth_rate"] == 0.0

    def test_action_eval_writes_requested_samples(self, tmp_path):
        assert run(["action-eval", "--samples", "3",
                    "--out", str(tmp_path)]) == 0
        lines = (tmp_path / "action_eval.csv").read_text().strip().splitlines()
        assert len(lines) == 4
        values = [float(line.split(",")[3]) for line in lines[1:]]
        assert all(np.isfinite(values))

    def test_rho_star_zero_coupling_summary(self, tmp_path):
        assert run(["rho-star", "--sample-budget", "1",
                    "--out", str(tmp_path)]) == 0
        summary = read_manifest(tmp_path)["summary"]
        assert summary["ceiling_hit"] is True
        assert summary["rho_star"] == 1.0

    def test_g_equivalence_hits_tolerance(self, tmp_path):
        assert run(["g-equivalence", "--out", str(tmp_path)]) == 0
        summary = read_manifest(tmp_path)["summary"]
        assert summary["extrapolated_deviation"] <= 1e-6
        lines = (tmp_path / "g_equivalence.csv").read_text().strip().splitlines()
        assert lines[0] == "stage,eps,max_deviation"
        assert lines[-1].startswith("extrapolated,")

    def test_coulomb_limit_table(self, tmp_path):
        assert run(["coulomb-limit", "--box-levels", "10",
                    "--eps-levels", "0.5", "--out", str(tmp_path)]) == 0
        lines = (tmp_path / "coulomb_limit.csv").read_text().strip().splitlines()
        assert lines[0] == "box_L,eps,lattice_sum,screened_target,abs_error"
        _, _, value, target, error = (float(v) for v in lines[1].split(","))
        assert error == abs(value - target)
        assert 0.0 < value < target

    def test_riemann_table_marks_anisotropic_excess(self, tmp_path):
        assert run(["riemann", "--box-levels", "15",
                    "--anisotropic-ells", "4", "--out", str(tmp_path)]) == 0
        lines = (tmp_path / "riemann.csv").read_text().strip().splitlines()
        assert len(lines) == 3
        cube = lines[1].split(",")
        aniso = lines[2].split(",")
        assert float(cube[0]) == float(cube[1]) == 15.0
        assert float(aniso[0]) == 16.0 and float(aniso[1]) == 4.0
        assert float(aniso[6]) > 0.0      # signed excess over the integral
