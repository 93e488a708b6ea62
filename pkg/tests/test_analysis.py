import math

import numpy as np
import pytest

from dgmemory.analysis import (
    ErrorPair,
    ReferenceWarning,
    eoc,
    error_norms,
    quadrature_norm,
    run_convergence,
)
from dgmemory.dg_solver import Problem, solve
from dgmemory.kernel import zero_kernel
from dgmemory.problems import registry
from dgmemory.timemesh import TimeMesh


class TestEoc:
    def test_quartering(self):
        assert eoc([0.4, 0.1]) == pytest.approx([2.0])

    def test_table_pair(self):
        assert eoc([3.848e-1, 1.940e-1])[0] == pytest.approx(0.99, abs=0.005)

    def test_stagnation(self):
        assert eoc([8, 8]) == [0.0]

    @pytest.mark.parametrize("bad", [[0.0, 1.0], [1.0, -1.0]])
    def test_rejects_non_positive(self, bad):
        with pytest.raises(ValueError):
            eoc(bad)


def test_error_pair_non_negative():
    with pytest.raises(ValueError):
        ErrorPair(-1.0, 0.0)


def stationary_problem():
    const = lambda x: np.stack([np.zeros_like(x), np.ones_like(x)])  # noqa: E731
    return Problem(2, np.eye(2), np.eye(2), zero_kernel(2),
                   F=lambda t, x: const(x), x0=const,
                   exact=lambda t, x: const(np.asarray(x)))


class TestErrorNorms:
    def test_exact_solution_zero_error(self):
        p = stationary_problem()
        sol = solve(p, TimeMesh.uniform(2.0, 4, 1, 1.0), 4, 2)
        e = error_norms(sol, p.exact)
        assert e.e_sup < 1e-9 and e.e_l2rho < 1e-9

    @pytest.mark.parametrize("q,k", [(0, 1), (1, 2), (2, 3)])
    def test_norm_identity_for_discrete_functions(self, q, k):
        p = registry("ex1")
        sol = solve(p, TimeMesh.uniform(2.0, 6, q, 1.0), 5, k)
        refined = error_norms(sol, None).e_l2rho
        assert refined == pytest.approx(quadrature_norm(sol), rel=1e-10)

    def test_example1_table_value(self):
        p = registry("ex1")
        sol = solve(p, TimeMesh.uniform(2.0, 32, 1, 1.0), 32, 2)
        e = error_norms(sol, p.exact)
        assert 3.310e-4 / 2 <= e.e_l2rho <= 2 * 3.310e-4

    def test_sup_dominates_weighted_norm(self):
        p = registry("ex2")
        sol = solve(p, TimeMesh.uniform(2.0, 8, 1, 1.0), 8, 2)
        e = error_norms(sol, p.exact)
        # M0 = I and the rule weights sum to at most T
        assert e.e_l2rho <= math.sqrt(2.0) * e.e_sup

    def test_reference_is_discrete_solution(self):
        p = registry("ex1")
        a = solve(p, TimeMesh.uniform(2.0, 4, 0, 1.0), 4, 1)
        assert error_norms(a, a).e_l2rho == 0.0


class TestRunConvergence:
    def test_example1_lowest_order_rate(self):
        rep = run_convergence(registry("ex1"), (1, 0), [8, 16, 32, 64, 128])
        assert rep.rates_l2rho[-1] == pytest.approx(1.00, abs=0.15)
        assert len(rep.rows) == 5 and all(r.N == r.M for r in rep.rows)

    def test_example2_high_order_descending(self):
        rep = run_convergence(registry("ex2"), (3, 2), [8, 16, 32, 64])
        r = rep.rates_l2rho
        assert r[0] > 3.5 and r[-1] < r[0] and r[-1] > 2.85

    def test_zero_problem(self):
        rep = run_convergence(registry("zero"), (2, 1), [4, 8])
        assert np.all(rep.l2rho == 0) and np.all(rep.sup == 0)
        assert np.all(np.isnan(rep.rates_l2rho))

    def test_reference_mode(self):
        with pytest.warns(ReferenceWarning):
            rep = run_convergence(registry("ex3"), (1, 0), [4, 8], mode="reference")
        assert (rep.reference["N"], rep.reference["k"], rep.reference["q"]) == (16, 2, 1)
        assert any("reference" in w for w in rep.warnings)
        assert np.all(rep.l2rho > 0)

    def test_exact_mode_needs_solution(self):
        with pytest.raises(ValueError):
            run_convergence(registry("ex3"), (1, 0), [4, 8], mode="exact")

    @pytest.mark.parametrize("levels", [[], [4, 12], [8, 4]])
    def test_levels_validated(self, levels):
        with pytest.raises(ValueError):
            run_convergence(registry("ex1"), (1, 0), levels)

    def test_warnings_recorded(self):
        rep = run_convergence(registry("ex1"), (1, 0), [4, 8])
        assert any("CoercivityWarning" in w for w in rep.warnings)
