"""Error norms, convergence orders and mesh-hierarchy runs."""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dg_solver import DiscreteSolution, Problem, solve
from .timemesh import TimeMesh

__all__ = [
    "ErrorPair",
    "ConvergenceRow",
    "ConvergenceReport",
    "ReferenceWarning",
    "error_norms",
    "quadrature_norm",
    "eoc",
    "run_convergence",
]


class ReferenceWarning(UserWarning):
    """Errors were measured against a discrete reference solution."""


@dataclass(frozen=True)
class ErrorPair:
    """``e_sup``: sup in time of the ``M0``-weighted ``L2`` error;
    ``e_l2rho``: exponentially weighted space-time ``L2`` error."""

    e_sup: float
    e_l2rho: float

    def __post_init__(self):
        if self.e_sup < 0 or self.e_l2rho < 0:
            raise ValueError("norms are non-negative")


class _Evaluator:
    """Values of a discrete or analytic function on a fixed spatial point set."""

    def __init__(self, target, x):
        self.target = target
        self.x = x
        self._E = None
        if isinstance(target, DiscreteSolution) and x is not None:
            self._E = target.system.eval_matrices(x)

    def __call__(self, t: float, dofs=None) -> np.ndarray:
        tgt = self.target
        if isinstance(tgt, DiscreteSolution):
            d = tgt.dofs_at([t])[0] if dofs is None else dofs
            if self._E is None:
                return d.reshape(tgt.system.n, 1)
            return np.stack([E @ tgt.system.block(d, a) for a, E in enumerate(self._E)])
        vals = np.asarray(tgt(t, self.x), dtype=float)
        return vals.reshape(vals.shape[0], -1)


def _spatial_rule(sol: DiscreteSolution, r: int):
    sys_ = sol.system
    if not hasattr(sys_, "spaces"):
        return None, np.ones(1)
    k = sol.info.get("k", sys_.k)
    x, w, _, _ = sys_.spaces[0].quadrature_points(k + r)
    return x, w


def error_norms(sol: DiscreteSolution, exact: Callable | DiscreteSolution | None,
                r: int = 3) -> ErrorPair:
    """Error of ``sol`` against ``exact`` in both norms.

    ``exact`` is a callable ``(t, x) -> (n, len(x))`` (``x`` is ``None`` for
    space-free problems), another :class:`DiscreteSolution` (reference mode)
    or ``None`` for the zero function.

    The weighted norm uses, on every interval, the weighted Radau rule with
    ``q + r + 1`` nodes and ``k + r`` Gauss points per spatial cell.  The sup
    norm is the maximum over those time nodes plus the right limit at every
    ``t_{m-1}``; it is therefore a lower bound of the true supremum.
    """
    mesh = sol.mesh
    rho = mesh.rho if not sol.growth else sol.growth
    if sol.growth:
        mesh = TimeMesh(mesh.points, mesh.q, rho)
    x, w = _spatial_rule(sol, r)
    M0 = sol.system.M0
    approx = _Evaluator(sol, x)
    ref = None if exact is None else _Evaluator(exact, x)

    def sq(e):
        return float(np.sum(w * e * e))

    def sq_m0(e):
        return float(np.sum(M0 * np.einsum("ap,bp,p->ab", e, e, w)))

    total = 0.0
    sup = 0.0
    for m in range(1, mesh.M + 1):
        rule = mesh.rule(m, mesh.q + r)
        t0 = rule.t0
        times = np.concatenate([[t0], rule.nodes])
        D = sol.interval_dofs(m, times)
        acc = 0.0
        for idx, (t, d) in enumerate(zip(times, D)):
            e = approx(t, d)
            if ref is not None:
                e = e - ref(max(t, 0.0))
            sup = max(sup, sq_m0(e))
            if idx > 0:
                acc += rule.weights[idx - 1] * sq(e)
        total += np.exp(-2.0 * rho * t0) * acc
    return ErrorPair(float(np.sqrt(sup)), float(np.sqrt(total)))


def quadrature_norm(sol: DiscreteSolution) -> float:
    """``||U||_{Q,rho}`` from the solver's own Radau rule and mass matrices.

    For a discrete function the integrand is a polynomial of degree ``2q``
    in time, so this equals the exact weighted norm.
    """
    mesh = sol.mesh
    mass = sol.system._plain_mass()
    total = 0.0
    for m in range(1, mesh.M + 1):
        rule = mesh.rule(m)
        c = sol.coeffs[m - 1]
        quad = np.einsum("j,jd,jd->", rule.weights, c, (mass @ c.T).T)
        total += np.exp(-2.0 * mesh.rho * rule.t0) * quad
    return float(np.sqrt(total))


def eoc(errors: Sequence[float]) -> list[float]:
    """``log2(e_i / e_{i+1})`` for errors on successively doubled meshes."""
    errs = np.asarray(errors, dtype=float)
    if np.any(errs <= 0):
        raise ValueError("errors must be positive to compute convergence orders")
    return list(np.log2(errs[:-1] / errs[1:]))


def _safe_eoc(errors):
    out = [float("nan")]
    for a, b in zip(errors[:-1], errors[1:]):
        out.append(float(np.log2(a / b)) if a > 0 and b > 0 else float("nan"))
    return out


@dataclass(frozen=True)
class ConvergenceRow:
    N: int
    M: int
    e_sup: float
    rate_sup: float
    e_l2rho: float
    rate_l2rho: float


@dataclass
class ConvergenceReport:
    k: int
    q: int
    rows: list
    mode: str = "exact"
    warnings: list = field(default_factory=list)
    timings: list = field(default_factory=list)
    reference: dict = field(default_factory=dict)

    @property
    def l2rho(self) -> np.ndarray:
        return np.array([r.e_l2rho for r in self.rows])

    @property
    def sup(self) -> np.ndarray:
        return np.array([r.e_sup for r in self.rows])

    @property
    def rates_l2rho(self) -> np.ndarray:
        return np.array([r.rate_l2rho for r in self.rows[1:]])

    @property
    def rates_sup(self) -> np.ndarray:
        return np.array([r.rate_sup for r in self.rows[1:]])


def run_convergence(
    problem: Problem,
    degrees: tuple[int, int],
    levels: Sequence[int],
    mode: str = "exact",
    r: int = 3,
    solver_kw: dict | None = None,
    ref_factor: int = 2,
    keep_solutions: bool = False,
) -> ConvergenceReport:
    """Solve on ``N = M = level`` for every level and tabulate both errors.

    In ``reference`` mode a reference solution is computed on
    ``ref_factor * max(levels)`` cells in space and time with degrees
    ``(k+1, q+1)`` and every level is compared against it; a
    :class:`ReferenceWarning` is recorded on the report because this is only
    a proxy for the true error.
    """
    k, q = degrees
    if k < 1 or q < 0:
        raise ValueError("need k >= 1 and q >= 0")
    levels = list(levels)
    if not levels or any(b != 2 * a for a, b in zip(levels[:-1], levels[1:])):
        raise ValueError("levels must be a non-empty doubling sequence")
    if mode not in ("exact", "reference"):
        raise ValueError(f"unknown mode {mode!r}")
    kw = dict(solver_kw or {})
    report = ConvergenceReport(k, q, [], mode)

    def run(N, kk, qq):
        mesh = TimeMesh.uniform(problem.T, N, qq, problem.rho)
        t = time.perf_counter()
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            sol = solve(problem, mesh, N if problem.spatial else None, kk, **kw)
        for wmsg in caught:
            text = f"N={N} (k={kk}, q={qq}): {wmsg.category.__name__}: {wmsg.message}"
            if text not in report.warnings:
                report.warnings.append(text)
        return sol, time.perf_counter() - t

    if mode == "exact":
        if problem.exact is None:
            raise ValueError("exact mode needs problem.exact")
        target = problem.exact
    else:
        n_ref = ref_factor * levels[-1]
        target, dt = run(n_ref, k + 1, q + 1)
        report.reference = {"N": n_ref, "M": n_ref, "k": k + 1, "q": q + 1, "seconds": dt}
        msg = (f"errors measured against a reference solution (N=M={n_ref}, "
               f"k={k + 1}, q={q + 1}); rates are only indicative")
        report.warnings.append(msg)
        warnings.warn(msg, ReferenceWarning, stacklevel=2)

    pairs = []
    sols = []
    for N in levels:
        sol, dt = run(N, k, q)
        pairs.append(error_norms(sol, target, r))
        report.timings.append(dt)
        if keep_solutions:
            sols.append(sol)
    rs = _safe_eoc([p.e_sup for p in pairs])
    rl = _safe_eoc([p.e_l2rho for p in pairs])
    report.rows = [ConvergenceRow(N, N, p.e_sup, a, p.e_l2rho, b)
                   for N, p, a, b in zip(levels, pairs, rs, rl)]
    if keep_solutions:
        report.solutions = sols
        report.target = target
    return report
