import csv

import numpy as np
import pytest

from dgmemory.cli import RunConfig, config_from_args, main, read_config
from dgmemory.problems import registry


def read_rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


class TestRegistry:
    def test_example1(self):
        p = registry("ex1")
        assert p.n == 2 and p.gamma == 1.0 and p.T == 2.0 and p.rho == 1.0
        np.testing.assert_array_equal(p.M0, np.eye(2))
        np.testing.assert_allclose(p.kernel(2.0, 1.0), [[1, 1], [2, 1]])
        assert p.source_mode == "manufactured"

    def test_example2_kernel(self):
        p = registry("ex2")
        np.testing.assert_allclose(p.kernel(1.0, 0.75), np.diag([4**0.75, 2.0]))

    def test_example3(self):
        p = registry("ex3")
        x = np.array([0.25, 0.5])
        np.testing.assert_allclose(p.F(0.3, x), np.ones((2, 2)))
        np.testing.assert_allclose(p.x0(x), [np.sin(2 * np.pi * x**2), [0, 0]], atol=1e-15)
        assert p.exact is None and p.kernel.singular

    def test_unknown(self):
        with pytest.raises(ValueError):
            registry("ex9")

    def test_exact_solution_consistent_derivatives(self):
        p = registry("ex1")
        x = np.linspace(0.1, 0.9, 5)
        h = 1e-6
        fd_t = (p.exact(0.7 + h, x) - p.exact(0.7 - h, x)) / (2 * h)
        fd_x = (p.exact(0.7, x + h) - p.exact(0.7, x - h)) / (2 * h)
        np.testing.assert_allclose(p.exact_dt(0.7, x), fd_t, atol=1e-8)
        np.testing.assert_allclose(p.exact_dx(0.7, x), fd_x, atol=1e-7)


class TestConfig:
    def test_defaults_mirror_paper(self):
        cfg = RunConfig(k=3)
        assert cfg.q == 2 and cfg.rho == 1.0 and cfg.T == 2.0

    @pytest.mark.parametrize("kw", [dict(k=0), dict(levels=(8, 12)), dict(T=-1.0), dict(example="exx"),
                                    dict(history_quad="magic")])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            RunConfig(**kw)

    def test_mode(self):
        assert RunConfig(example="ex3").mode == "reference"
        assert RunConfig(example="ex1").mode == "exact"

    def test_file_and_override(self, tmp_path):
        cfg_file = tmp_path / "run.txt"
        cfg_file.write_text("example = ex2\nk = 2\nlevels = 4,8\ninfo.note = ignored\n")
        cfg, _ = config_from_args(["--config", str(cfg_file), "--q", "0"])
        assert (cfg.example, cfg.k, cfg.q, cfg.levels) == ("ex2", 2, 0, (4, 8))

    def test_unknown_key(self, tmp_path):
        cfg_file = tmp_path / "run.txt"
        cfg_file.write_text("colour = blue\n")
        with pytest.raises(ValueError):
            read_config(cfg_file)


class TestRun:
    def test_example1_two_levels(self, tmp_path, capsys):
        out = tmp_path / "o"
        assert main(["--example", "ex1", "--k", "1", "--q", "0", "--levels", "8,16",
                     "--out-dir", str(out)]) == 0
        rows = read_rows(out / "ex1_k1_q0.csv")
        assert rows[0] == ["k", "q", "N", "M", "E_sup", "rate", "L2rho", "rate"]
        assert len(rows) == 3
        assert float(rows[1][6]) == pytest.approx(9.477e-2, rel=0.5)
        assert float(rows[2][7]) == pytest.approx(1.0, abs=0.1)
        assert rows[1][5] == "" and rows[1][7] == ""
        for name in ("ex1_k1_q0.md", "manifest.txt", "ex1_k1_q0_grid.csv", "kernel_norms.csv",
                     "ex1_k1_q0_convergence.png", "ex1_k1_q0_solution.png"):
            assert (out / name).exists(), name
        grid = read_rows(out / "ex1_k1_q0_grid.csv")
        assert grid[0] == ["t", "x", "u", "v"] and len(grid) == 1 + 64 * 64
        assert "| (1,0) | 8 |" in capsys.readouterr().out

    def test_manifest_rerun_bit_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["--example", "ex2", "--k", "2", "--levels", "4,8", "--no-figures",
                     "--out-dir", str(a)]) == 0
        assert main(["--config", str(a / "manifest.txt"), "--out-dir", str(b)]) == 0
        assert (a / "ex2_k2_q1.csv").read_bytes() == (b / "ex2_k2_q1.csv").read_bytes()
        manifest = (a / "manifest.txt").read_text()
        for key in ("quad_tol", "source_tol", "history_quad", "refinement", "info.status = ok",
                    "info.seconds.total"):
            assert key in manifest

    def test_zero_problem_all_zero(self, tmp_path):
        out = tmp_path / "z"
        assert main(["--example", "zero", "--k", "2", "--levels", "4,8", "--no-figures",
                     "--out-dir", str(out)]) == 0
        rows = read_rows(out / "zero_k2_q1.csv")
        assert all(float(r[4]) == 0.0 and float(r[6]) == 0.0 for r in rows[1:])

    def test_failure_preserves_artifacts(self, tmp_path):
        out = tmp_path / "f"
        # ex3 has no exact solution: forcing exact mode fails inside the run
        status = main(["--example", "ex3", "--ref-mode", "exact", "--levels", "4", "--no-figures",
                       "--out-dir", str(out)])
        assert status == 1
        assert (out / "FAILED").exists()
        assert "info.status = failed" in (out / "manifest.txt").read_text()

    def test_bad_flag_value(self, capsys):
        assert main(["--levels", "8,12"]) == 2
        assert "doubling" in capsys.readouterr().err
