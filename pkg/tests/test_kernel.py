import math

import mpmath
import numpy as np
import pytest

from dgmemory.kernel import (
    KernelEntry,
    KernelSpec,
    apply_Tk,
    constant_kernel,
    eval_kernel,
    example1_kernel,
    example2_kernel,
    fixed_history_moments,
    history_moments,
    kernel_norm_report,
    named_kernel,
    norm_continuous,
    norm_discrete,
    power_kernel,
    rho_threshold,
    zero_kernel,
)
from dgmemory.quadrature import gauss_legendre, radau_on_interval
from dgmemory.timemesh import TimeMesh

T = 2.0


# ---------------------------------------------------------------------------
# random instances for the property suites
# ---------------------------------------------------------------------------


def random_smooth_kernel(rng):
    c = rng.normal(size=4)

    def g(t, s, c=c):
        return c[0] + c[1] * (t - s) + c[2] * s * t + c[3] * np.cos(t - 2 * s)

    return KernelSpec([[KernelEntry(1.0, 0.0, g)]], "random-smooth")


def random_kernel(rng, i):
    if i % 2 == 0:
        return random_smooth_kernel(rng)
    return power_kernel(rng.uniform(0.1, 2.0), float(rng.choice([0.25, 0.5, 0.75])))


class PiecewisePoly:
    """Random piecewise polynomial on a uniform partition of [0, T]."""

    def __init__(self, rng, pieces=4, deg=2):
        self.br = np.linspace(0.0, T, pieces + 1)
        self.C = rng.normal(size=(pieces, deg + 1))

    def __call__(self, s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        i = np.clip(np.searchsorted(self.br, s, side="right") - 1, 0, len(self.C) - 1)
        x = s - self.br[i]
        return sum(self.C[i, j] * x**j for j in range(self.C.shape[1]))


def weighted_l2(g, breaks, rho, npts=8):
    gl = gauss_legendre(npts)
    tot = 0.0
    for a, b in zip(breaks[:-1], breaks[1:]):
        t, w = gl.on(a, b)
        tot += np.sum(w * np.exp(-2 * rho * t) * g(t) ** 2)
    return math.sqrt(tot)


# ---------------------------------------------------------------------------
# evaluation and T_K
# ---------------------------------------------------------------------------


class TestEval:
    def test_example1(self):
        np.testing.assert_allclose(eval_kernel(example1_kernel(), 2.0, 1.0), [[1, 1], [2, 1]])

    def test_zero(self):
        assert not np.any(eval_kernel(zero_kernel(3), 1.0, 0.2))

    def test_example2(self):
        np.testing.assert_allclose(eval_kernel(example2_kernel(), 1.0, 0.75),
                                   np.diag([4**0.75, 2.0]), rtol=1e-15)

    def test_singular_domain_error(self):
        with pytest.raises(ValueError):
            eval_kernel(example2_kernel(), 1.0, 1.0)

    def test_exponent_range(self):
        with pytest.raises(ValueError):
            KernelEntry(1.0, 1.0)

    def test_non_square_rejected(self):
        with pytest.raises(ValueError):
            KernelSpec([[None, None]])


class TestApplyTk:
    def test_constant(self):
        assert apply_Tk(constant_kernel(1.0), lambda s: np.ones((len(s), 1)), 3.0)[0] == pytest.approx(3.0)

    def test_inverse_sqrt(self):
        out = apply_Tk(power_kernel(1.0, 0.5), lambda s: np.ones((len(s), 1)), 1.0)
        assert out[0] == pytest.approx(2.0, abs=1e-12)

    def test_example1_unit_vector(self):
        out = apply_Tk(example1_kernel(), lambda s: np.tile([1.0, 0.0], (len(s), 1)), 1.0)
        np.testing.assert_allclose(out, [0.5, 1.0], atol=1e-13)

    def test_trailing_axes(self):
        x = np.linspace(0, 1, 4)
        out = apply_Tk(constant_kernel(2.0), lambda s: s[:, None, None] * x[None, None, :], 1.0)
        np.testing.assert_allclose(out[0], x, atol=1e-13)

    @pytest.mark.parametrize("i", range(6))
    def test_causality_exact_zero(self, i, rng):
        K = random_kernel(rng, i)
        a = 0.8

        def f(s):
            return np.where(s > a, 1.0 + s, 0.0)[:, None]

        for t in (0.1, 0.5, a):
            assert apply_Tk(K, f, t, breakpoints=[a])[0] == 0.0
        assert apply_Tk(K, f, 1.5, breakpoints=[a])[0] != 0.0

    def test_breakpoints_as_array(self):
        out = apply_Tk(constant_kernel(1.0), lambda s: (s > 0.5).astype(float)[:, None], 1.0,
                       breakpoints=np.array([0.0, 0.5, 1.0]))
        assert out[0] == pytest.approx(0.5, abs=1e-14)


class TestHistoryMoments:
    def test_q0_full_interval(self):
        r = radau_on_interval(0, 0.0, 1.0, 0.0)
        assert history_moments(constant_kernel(1.0), r, 2.0)[0, 0, 0] == pytest.approx(1.0)

    def test_q0_truncated(self):
        r = radau_on_interval(0, 0.0, 1.0, 0.0)
        assert history_moments(constant_kernel(1.0), r, 0.5)[0, 0, 0] == pytest.approx(0.5)

    def test_q1_singular_oracle(self):
        r = radau_on_interval(1, 0.0, 1.0, 0.0)  # nodes {1/3, 1}
        G = history_moments(power_kernel(1.0, 0.5), r, 1.0, tol=1e-13)[:, 0, 0]
        mpmath.mp.dps = 30
        phi0 = lambda s: (s - 1) / (1 / 3 - 1)  # noqa: E731
        phi1 = lambda s: (s - 1 / 3) / (1 - 1 / 3)  # noqa: E731
        for g, phi in zip(G, (phi0, phi1)):
            oracle = float(mpmath.quad(lambda s: phi(s) / mpmath.sqrt(1 - s), [0, 1]))
            assert g == pytest.approx(oracle, abs=1e-13)

    def test_target_before_interval_rejected(self):
        with pytest.raises(ValueError):
            history_moments(constant_kernel(1.0), radau_on_interval(0, 1.0, 2.0, 0.0), 0.5)

    def test_fixed_rule_matches_adaptive_for_polynomial_kernel(self):
        r = radau_on_interval(2, 0.5, 1.0, 1.0)
        K = example1_kernel()
        targets = np.array([1.3, 1.7])
        G = fixed_history_moments(K, r.nodes, r.t0, np.full(2, r.t1), targets, 3)
        for j, t in enumerate(targets):
            np.testing.assert_allclose(G[j], history_moments(K, r, t), atol=1e-13)


# ---------------------------------------------------------------------------
# norms
# ---------------------------------------------------------------------------


class TestNorms:
    def test_constant_closed_form(self):
        assert norm_continuous(constant_kernel(1.0), 1.0, T) == pytest.approx(1 - math.exp(-2), rel=1e-10)

    def test_zero(self):
        assert norm_continuous(zero_kernel(2), 1.0, T) == 0.0
        assert norm_discrete(zero_kernel(2), TimeMesh.uniform(T, 4, 1, 1.0)) == 0.0

    def test_discrete_constant_unweighted(self):
        mesh = TimeMesh.uniform(T, 8, 2, 0.0)
        assert norm_discrete(constant_kernel(1.0), mesh) == pytest.approx(T, rel=1e-12)

    def test_example1_at_rho4(self):
        assert norm_continuous(example1_kernel(), 4.0, T) <= 0.5

    def test_scaled_reduction(self):
        a = norm_continuous(example1_kernel(), 2.0, T)
        b = norm_continuous(example1_kernel(), 2.0, T, reduction="scaled")
        assert b == pytest.approx(2 * a)
        with pytest.raises(ValueError):
            norm_continuous(example1_kernel(), 2.0, T, reduction="frobenius")

    def test_report(self):
        rep = kernel_norm_report(example1_kernel(), TimeMesh.uniform(T, 64, 1, 4.0), 1.0)
        assert rep.satisfied == (rep.discrete_norm <= 0.5)
        assert rep.continuous_norm >= 0 and rep.discrete_norm >= 0

    @pytest.mark.parametrize("i", range(20))
    def test_monotone_in_rho(self, i, rng):
        K = random_kernel(rng, i)
        rhos = np.sort(rng.uniform(0.0, 6.0, size=3))
        vals = [norm_continuous(K, r, T, n_t=64, n_s=64, tol=1e-12) for r in rhos]
        assert vals[1] <= vals[0] * (1 + 1e-9) and vals[2] <= vals[1] * (1 + 1e-9)

    def test_singular_second_term_unbounded_near_nodes(self):
        # the quadrature sum contains |K(t_{m,i}, s)|, infinite as s -> t_{m,i}^-
        from dgmemory.kernel import _second_term_discrete

        mesh = TimeMesh.uniform(T, 4, 1, 1.0)
        e = example2_kernel().entries[0][0]
        rules = [mesh.rule(m) for m in range(1, 5)]
        node = rules[1].nodes[0]
        vals = _second_term_discrete(e, 1.0, rules, node - np.array([1e-2, 1e-4, 1e-6]))
        assert vals[0] < vals[1] < vals[2] and vals[2] > 100 * vals[0]


class TestRhoThreshold:
    def test_zero_kernel_first_candidate(self):
        assert rho_threshold(zero_kernel(1), 1.0, TimeMesh.uniform(T, 4, 0), [0.5, 1, 2]) == 0.5

    def test_example1(self):
        thr = rho_threshold(example1_kernel(), 1.0, TimeMesh.uniform(T, 64, 1, 1.0), [1, 2, 3, 4, 5])
        assert thr is not None and thr <= 4

    def test_huge_constant_none(self):
        assert rho_threshold(constant_kernel(1e6), 1.0, TimeMesh.uniform(T, 4, 0), [1, 2]) is None

    def test_unsorted_rejected(self):
        with pytest.raises(ValueError):
            rho_threshold(zero_kernel(1), 1.0, TimeMesh.uniform(T, 4, 0), [2, 1])


def test_example2_discrete_decay():
    rhos = np.array([1.0, 16.0, 256.0])
    vals = [norm_discrete(example2_kernel(), TimeMesh.uniform(T, 64, 2, r)) for r in rhos]
    slope = np.polyfit(np.log(rhos), np.log(vals), 1)[0]
    assert -0.35 <= slope <= -0.15


class TestNamed:
    @pytest.mark.parametrize("name,n,singular", [
        ("example1", 2, False), ("example2_3", 2, True), ("example2", 2, True),
        ("zero", 2, False), ("zero(3)", 3, False), ("scalar_const(0.5)", 1, False),
        ("scalar_power(2, 0.5)", 1, True),
    ])
    def test_parse(self, name, n, singular):
        K = named_kernel(name)
        assert K.n == n and K.singular == singular

    @pytest.mark.parametrize("bad", ["nope", "scalar_power(1)", "example1(3)", "(("])
    def test_reject(self, bad):
        with pytest.raises(ValueError):
            named_kernel(bad)


# ---------------------------------------------------------------------------
# operator bounds on >= 100 random instances
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("i", range(100))
def test_operator_bound_continuous(i):
    rng = np.random.default_rng(1000 + i)
    K = random_kernel(rng, i)
    rho = rng.uniform(0.2, 3.0)
    f = PiecewisePoly(rng)

    def Tkf(ts):
        return np.array([apply_Tk(K, lambda s: f(s)[:, None], t, 1e-11, breakpoints=f.br)[0] for t in ts])

    lhs = weighted_l2(Tkf, np.linspace(0, T, 9), rho, 6)
    # a coarser sup grid can only lower the norm, which makes the check stricter
    rhs = norm_continuous(K, rho, T, n_t=128, n_s=128, tol=1e-9) * weighted_l2(f, f.br, rho)
    assert lhs <= (1 + 1e-6) * rhs


@pytest.mark.parametrize("i", range(100))
def test_operator_bound_discrete(i):
    # smooth kernels only: for weakly singular kernels the semi-discrete norm is
    # infinite (see test_singular_second_term_unbounded_near_nodes)
    rng = np.random.default_rng(5000 + i)
    K = random_smooth_kernel(rng)
    rho = rng.uniform(0.2, 3.0)
    q = int(rng.integers(0, 3))
    M = int(rng.choice([4, 8]))
    mesh = TimeMesh.uniform(T, M, q, rho)
    C = rng.normal(size=(M, q + 1))

    def V(s):
        s = np.atleast_1d(s)
        ms = mesh.locate(s)
        out = np.empty(len(s))
        for m in np.unique(ms):
            sel = ms == m
            out[sel] = mesh.lagrange(m).basis(s[sel]) @ C[m - 1]
        return out[:, None]

    lhs = nv = 0.0
    for m in range(1, M + 1):
        r = mesh.rule(m)
        tv = np.array([apply_Tk(K, V, t, 1e-12, breakpoints=mesh.points)[0] for t in r.nodes])
        lhs += math.exp(-2 * rho * r.t0) * np.sum(r.weights * tv**2)
        nv += math.exp(-2 * rho * r.t0) * np.sum(r.weights * C[m - 1] ** 2)
    assert math.sqrt(lhs) <= (1 + 1e-6) * norm_discrete(K, mesh, n_t=128, n_s=128, tol=1e-9) * math.sqrt(nv)


@pytest.mark.parametrize("i", range(20))
def test_operator_bound_matrix_kernel_scaled(i):
    # for n x n kernels the entry-wise maximum times n bounds the operator
    rng = np.random.default_rng(9000 + i)
    c = rng.normal(size=(2, 2))
    alphas = rng.choice([0.0, 0.5], size=(2, 2))
    K = KernelSpec([[KernelEntry(c[a, b], alphas[a, b]) for b in range(2)] for a in range(2)])
    rho = rng.uniform(0.5, 3.0)
    f0, f1 = PiecewisePoly(rng), PiecewisePoly(rng)

    def f(s):
        return np.stack([f0(s), f1(s)], axis=1)

    def Tkf_sq(ts):
        return np.array([np.sum(apply_Tk(K, f, t, 1e-11, breakpoints=f0.br) ** 2) for t in ts])

    gl = gauss_legendre(6)
    lhs = 0.0
    for a, b in zip(np.linspace(0, T, 9)[:-1], np.linspace(0, T, 9)[1:]):
        t, w = gl.on(a, b)
        lhs += np.sum(w * np.exp(-2 * rho * t) * Tkf_sq(t))
    fn = math.hypot(weighted_l2(f0, f0.br, rho), weighted_l2(f1, f1.br, rho))
    assert math.sqrt(lhs) <= (1 + 1e-6) * norm_continuous(K, rho, T, reduction="scaled") * fn
