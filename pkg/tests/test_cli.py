from __future__ import annotations

import json
import subprocess
import sys

import numpy as np
import pytest

from tvmc_anneal.cli import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, EXIT_PARTIAL, main
from tvmc_anneal.lattice import diamond_manifest, load_edge_list
from tvmc_anneal import runner

FAST = ["--n-sites", "8", "--n-steps", "10", "--n-chains", "16", "--samples-per-chain", "8",
        "--exact-steps", "400"]


def run_json(capsys, argv):
    code = main(argv)
    return code, json.loads(capsys.readouterr().out)


class TestLatticeVerbs:
    def test_generate_lattice(self, capsys):
        assert main(["generate-lattice", "--n-sites", "18"]) == EXIT_OK
        lat, couplings = load_edge_list(capsys.readouterr().out)
        assert lat.edges == diamond_manifest(18).edges and couplings is None

    def test_sample_couplings_reproducible(self, tmp_path):
        a, b = tmp_path / "a.txt", tmp_path / "b.txt"
        assert main(["sample-couplings", "--n-sites", "8", "--seed", "3", "-o", str(a)]) == EXIT_OK
        assert main(["sample-couplings", "--n-sites", "8", "--seed", "3", "-o", str(b)]) == EXIT_OK
        assert a.read_text() == b.read_text()
        _, j = load_edge_list(a.read_text())
        assert np.all(np.abs(j) < 1)

    def test_missing_lattice(self, capsys):
        assert main(["generate-lattice"]) == EXIT_CONFIG
        assert "no lattice" in capsys.readouterr().err


class TestRun:
    def test_run_both(self, tmp_path, capsys):
        code, doc = run_json(capsys, ["run", *FAST, "--mode", "both", "--output-dir", str(tmp_path)])
        assert code == EXIT_OK and doc["status"] == "ok"
        assert np.isfinite(doc["epsilon_c"])
        code, cmp = run_json(capsys, ["compare", f"{doc['directory']}/correlations_tvmc.json",
                                      f"{doc['directory']}/correlations_exact.json"])
        assert cmp["epsilon_c"] == pytest.approx(doc["epsilon_c"])

    def test_config_file_with_override(self, tmp_path, capsys):
        cfg = tmp_path / "c.yaml"
        cfg.write_text("lattice: {n_sites: 8}\nn_steps: 5\nmode: tvmc\n"
                       "sampler: {n_chains: 8, samples_per_chain: 4}\n")
        code, doc = run_json(capsys, ["run", "--config", str(cfg), "--master-seed", "4",
                                      "--warm-sweeps", "3", "--output-dir", str(tmp_path / "o")])
        assert code == EXIT_OK
        rec = json.loads((tmp_path / "o" / "realization-000" / "record.json").read_text())
        assert rec["config"]["master_seed"] == 4 and rec["config"]["n_steps"] == 5
        assert rec["config"]["sampler"]["warm_sweeps"] == 3

    def test_default_output_dir_under_root(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv(runner.ENV_OUTPUT_ROOT, str(tmp_path))
        code, doc = run_json(capsys, ["run", *FAST, "--mode", "tvmc"])
        assert code == EXIT_OK and doc["directory"].startswith(str(tmp_path))

    @pytest.mark.parametrize("argv", [
        ["run", "--n-sites", "8", "--schedule", "cubic"],
        ["run", "--n-sites", "7"],
        ["run"],
        ["run", "--n-sites", "8", "--schedule-param", "amplitude"],
        ["run", "--config", "/nonexistent.yaml"],
        ["run", "--n-sites", "32", "--mode", "both"],
        ["bogus-verb"],
    ])
    def test_config_errors(self, argv, tmp_path):
        assert main([*argv, *([] if argv == ["bogus-verb"] else ["--output-dir", str(tmp_path)])]) \
            == EXIT_CONFIG

    def test_numerical_failure_exit_code(self, tmp_path, monkeypatch, capsys):
        def bad_step(self, psi, t):
            raise FloatingPointError("synthetic")

        monkeypatch.setattr(runner.TdvpEngine, "step", bad_step)
        code, doc = run_json(capsys, ["run", *FAST, "--output-dir", str(tmp_path)])
        assert code == EXIT_NUMERICAL and doc["status"] == "failed"

    def test_sweep_partial(self, tmp_path, monkeypatch, capsys):
        real_phase = runner._tvmc_phase

        def flaky(config, hamiltonian, record, *rest):
            if record.index == 1:
                raise FloatingPointError("synthetic")
            return real_phase(config, hamiltonian, record, *rest)

        monkeypatch.setattr(runner, "_tvmc_phase", flaky)
        code, doc = run_json(capsys, ["sweep", *FAST, "--realizations", "2", "--mode", "tvmc",
                                      "--output-dir", str(tmp_path)])
        assert code == EXIT_PARTIAL and doc["n_failed"] == 1


class TestReport:
    def test_tables(self, tmp_path, capsys):
        for n, d in ((8, "a"), (12, "b")):
            argv = ["sweep", "--n-sites", str(n), "--n-steps", "10", "--n-chains", "16",
                    "--samples-per-chain", "8", "--exact-steps", "400", "--mode", "both",
                    "--e-res-every", "5", "--output-dir", str(tmp_path / d), "--label", d]
            assert main(argv) == EXIT_OK
        capsys.readouterr()
        code, doc = run_json(capsys, ["report", str(tmp_path / "a"), str(tmp_path / "b"),
                                      "-o", str(tmp_path / "rep")])
        assert code == EXIT_OK
        assert {"epsilon_by_ensemble.tsv", "residual_energy.tsv", "r2_epsilon_fit.json"} \
            <= set(doc["written"])
        rows = (tmp_path / "rep" / "epsilon_by_ensemble.tsv").read_text().splitlines()
        assert len(rows) == 3 and rows[0].startswith("label\tn_sites")


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "tvmc_anneal.cli", "--help"],
                         capture_output=True, text=True)
    assert out.returncode == 0 and "sweep" in out.stdout
