"""Discontinuous Galerkin time stepping with weighted Gauss-Radau quadrature.

On every interval ``I_m`` the discrete solution is a degree-``q`` polynomial
in time with coefficients ``c_{m,i}`` (spatial dof vectors) at the Radau
nodes ``t_{m,i}``.  Testing with ``phi_{m,j} psi`` and applying the weighted
rule collapses every time integral to a nodal evaluation, giving the local
system

    sum_i [ w_j D_ji M0h + l_j l_i M0h + w_j delta_ij (M1h + Ah)
            + w_j sum_ab G^m_ab(j, i) E_ab ] c_{m,i}
      = w_j <F(t_{m,j}), psi> + l_j M0h U(t_{m-1})
        - w_j sum_{n<m} sum_ab E_ab sum_i G^n_ab(j, i) c_{n,i,b}

where ``G^n_ab(j, i) = int_{I_n, s < t_{m,j}} K_ab(t_{m,j}, s) phi_{n,i}(s) ds``
and ``E_ab`` is the cross-component mass matrix placed in block ``(a, b)``.
The double sum over past intervals is what makes the cost quadratic in ``M``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .kernel import KernelSpec, apply_Tk, history_moments, norm_discrete
from .quadrature import MappedRule, gauss_legendre, lagrange_basis
from .space_fem import BlockSystem, OdeSystem, SpaceMesh1D, assemble_block_system
from .timemesh import LagrangeData, TimeMesh

__all__ = [
    "TimeMesh",
    "LagrangeData",
    "Problem",
    "ManufacturedSource",
    "DiscreteSolution",
    "SolverError",
    "CoercivityWarning",
    "MomentEngine",
    "local_matrix",
    "history_rhs",
    "step",
    "solve",
    "eval_solution",
]

#: Gauss-Legendre points used for singular entries on source intervals that
#: end at least one step before the target node.  The singular point then
#: lies a full interval width away, so the rule converges geometrically
#: (Bernstein ellipse parameter ``3 + sqrt(8)``); 20 points is far below
#: round-off.
FAR_FIELD_POINTS = 20


class SolverError(RuntimeError):
    """A local system could not be factorised."""


class CoercivityWarning(UserWarning):
    """The discrete kernel norm exceeds ``gamma / 2``."""


@dataclass
class Problem:
    """Data of ``(d/dt M0 + M1 + A + T_K) U = F`` with ``U(0) = x0``.

    Parameters
    ----------
    n : int
        Number of components.
    M0, M1 : array_like
        Constant ``n x n`` coefficient matrices; ``M0`` symmetric.
    kernel : KernelSpec
        Memory kernel.
    F : callable, optional
        ``F(t, x) -> (n, len(x))``.  For space-free problems ``x`` is ``None``
        and a length-``n`` vector is returned.
    x0 : callable or array_like
        Initial value, ``x0(x) -> (n, len(x))`` or a vector for space-free
        problems.
    gamma : float
        Coercivity constant of ``rho M0 + Re M1``.
    operator : {"grad", None} or ndarray
        Spatial operator: the first-order wave block, nothing, or a constant
        skew matrix (space-free problems only).
    bcs : sequence of str, optional
        Boundary conditions per component.
    exact, exact_dt, exact_dx : callable, optional
        Exact solution and its partial derivatives, each ``(t, x) -> (n, len(x))``.
    source_mode : {"direct", "manufactured"}
        ``manufactured`` builds ``F`` from the exact solution, including the
        memory term evaluated by adaptive quadrature.
    """

    n: int
    M0: np.ndarray
    M1: np.ndarray
    kernel: KernelSpec
    F: Callable | None = None
    x0: Callable | np.ndarray | None = None
    gamma: float = 1.0
    operator: object = "grad"
    bcs: tuple | None = None
    exact: Callable | None = None
    exact_dt: Callable | None = None
    exact_dx: Callable | None = None
    source_mode: str = "direct"
    T: float = 2.0
    rho: float = 1.0
    name: str = "custom"

    def __post_init__(self):
        self.M0 = np.atleast_2d(np.asarray(self.M0, dtype=float))
        self.M1 = np.atleast_2d(np.asarray(self.M1, dtype=float))
        if self.M0.shape != (self.n, self.n) or self.M1.shape != (self.n, self.n):
            raise ValueError("M0 and M1 must be n x n")
        if not np.allclose(self.M0, self.M0.T):
            raise ValueError("M0 must be symmetric")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.kernel.n != self.n:
            raise ValueError("kernel size does not match n")
        if self.source_mode not in ("direct", "manufactured"):
            raise ValueError(f"unknown source mode {self.source_mode!r}")
        if self.source_mode == "manufactured" and (
            self.exact is None or self.exact_dt is None
            or (self.operator == "grad" and self.exact_dx is None)
        ):
            raise ValueError("manufactured mode needs the exact solution and its derivatives")

    @property
    def spatial(self) -> bool:
        return self.operator is None or isinstance(self.operator, str)

    def with_kernel(self, kernel: KernelSpec) -> "Problem":
        return replace(self, kernel=kernel)


class ManufacturedSource:
    """``F = M0 dU/dt + M1 U + A U + T_K U`` for a prescribed exact ``U``.

    The memory part is computed by :func:`~dgmemory.kernel.apply_Tk` at
    tolerance ``tol``, jointly for all spatial points of a call.
    """

    def __init__(self, problem: Problem, tol: float = 1e-12):
        self.problem = problem
        self.tol = tol

    def _applied_A(self, t, x):
        p = self.problem
        if p.operator is None:
            return 0.0
        if isinstance(p.operator, str):
            # A (u, v) = (dv/dx, du/dx)
            d = np.asarray(p.exact_dx(t, x), dtype=float)
            return d[::-1]
        return np.asarray(p.operator, dtype=float) @ np.asarray(p.exact(t, x), dtype=float)

    def analytic(self, t, x):
        p = self.problem
        U = np.asarray(p.exact(t, x), dtype=float)
        dU = np.asarray(p.exact_dt(t, x), dtype=float)
        flat = U.reshape(p.n, -1)
        out = (p.M0 @ dU.reshape(p.n, -1) + p.M1 @ flat).reshape(U.shape)
        return out + self._applied_A(t, x)

    def memory(self, t, x):
        p = self.problem
        if p.kernel.is_zero:
            return 0.0

        def f(s):
            return np.stack([np.asarray(p.exact(si, x), dtype=float) for si in s])

        return apply_Tk(p.kernel, f, t, self.tol)

    def __call__(self, t, x):
        return self.analytic(t, x) + self.memory(t, x)


@dataclass
class DiscreteSolution:
    """Nodal coefficients of the space-time discrete solution.

    ``coeffs[m-1, i]`` is the dof vector at ``t_{m,i}``; ``coeffs[m-1, q]``
    is the value at ``t_m``.  With ``growth != 0`` (reformulated runs) the
    stored polynomial is ``V`` and values are returned as
    ``exp(growth * t) V(t)``.
    """

    mesh: TimeMesh
    system: BlockSystem
    coeffs: np.ndarray
    x0: np.ndarray
    growth: float = 0.0
    info: dict = field(default_factory=dict)

    @property
    def q(self) -> int:
        return self.mesh.q

    def dofs_at(self, t) -> np.ndarray:
        """Dof vectors at times ``t``: shape ``(len(t), ndof)``.

        ``t = 0`` returns the initial dofs; otherwise ``t`` is located in
        ``(t_{m-1}, t_m]``.
        """
        t = np.atleast_1d(np.asarray(t, dtype=float))
        ms = self.mesh.locate(t)
        out = np.empty((len(t), self.coeffs.shape[-1]))
        for m in np.unique(ms):
            sel = ms == m
            phi = self.mesh.lagrange(int(m)).basis(t[sel])
            out[sel] = phi @ self.coeffs[m - 1]
        out[t == 0] = self.x0
        if self.growth:
            out *= np.exp(self.growth * t)[:, None]
        return out

    def interval_dofs(self, m: int, t) -> np.ndarray:
        """Values of the interval-``m`` polynomial at ``t`` (one-sided limits allowed)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = self.mesh.lagrange(m).basis(t) @ self.coeffs[m - 1]
        if self.growth:
            out *= np.exp(self.growth * t)[:, None]
        return out

    def evaluate(self, t: float, x=None) -> np.ndarray:
        """Solution at one time ``t`` and spatial points ``x``: ``(n, len(x))``."""
        return self.system.evaluate(self.dofs_at([t])[0], x)


def eval_solution(sol: DiscreteSolution, t: float, x=None) -> np.ndarray:
    """Functional alias of :meth:`DiscreteSolution.evaluate`."""
    if not 0 <= t <= sol.mesh.T:
        raise ValueError(f"time {t} outside [0, {sol.mesh.T}]")
    return sol.evaluate(t, x)


# ---------------------------------------------------------------------------
# memory moments
# ---------------------------------------------------------------------------


class MomentEngine:
    """Kernel moments against the temporal Lagrange bases of a mesh.

    ``mode="fixed"`` follows the paper for smooth entries: a ``(q+1)``-point
    Gauss-Legendre rule on every source interval.  Singular entries are always
    integrated adaptively (with the substitution at the target time) on the
    local and the adjacent interval, and with :data:`FAR_FIELD_POINTS`
    Gauss-Legendre points further back.  ``mode="adaptive"`` integrates every
    entry adaptively to ``tol``.
    """

    def __init__(self, kernel: KernelSpec, mesh: TimeMesh, mode: str = "fixed",
                 tol: float = 1e-12):
        if mode not in ("fixed", "adaptive"):
            raise ValueError(f"unknown history quadrature {mode!r}")
        self.kernel = kernel
        self.mesh = mesh
        self.mode = mode
        self.tol = tol
        self.q = mesh.q
        self._tables = {}

    def _table(self, npts):
        """Per-interval Gauss points, weights and Lagrange values."""
        if npts not in self._tables:
            g = gauss_legendre(npts)
            pts = self.mesh.points
            half = 0.5 * np.diff(pts)[:, None]
            S = pts[:-1, None] + half * (g.nodes[None, :] + 1.0)
            W = half * g.weights[None, :]
            Phi = np.stack([self.mesh.lagrange(m).basis(S[m - 1]) for m in range(1, self.mesh.M + 1)])
            self._tables[npts] = (S, W, Phi)
        return self._tables[npts]

    def _gauss_history(self, e, targets, upto, npts):
        """``(upto, J, q+1)`` moments over intervals ``1..upto`` by Gauss-Legendre."""
        S, W, Phi = self._table(npts)
        S, W, Phi = S[:upto], W[:upto], Phi[:upto]
        kv = e(targets[:, None, None], S[None])                        # (J, n, P)
        return np.einsum("np,jnp,npi->nji", W, kv, Phi)

    def _adaptive(self, e, rule: MappedRule, target):
        spec = KernelSpec([[e]])
        return history_moments(spec, rule, target, self.tol)[:, 0, 0]

    def _use_gauss(self, e) -> bool:
        return self.mode == "fixed" and not e.singular

    def local(self, m: int) -> np.ndarray:
        """``G[j, i, a, b] = int_{t_{m-1}}^{t_{m,j}} K_ab(t_{m,j}, s) phi_{m,i}(s) ds``."""
        rule = self.mesh.rule(m)
        J = len(rule.nodes)
        n = self.kernel.n
        G = np.zeros((J, J, n, n))
        g = gauss_legendre(self.q + 1)
        for a, b, e in self.kernel.items():
            if self._use_gauss(e):
                half = 0.5 * (rule.nodes - rule.t0)
                s = rule.t0 + half[:, None] * (g.nodes[None, :] + 1.0)     # (J, P)
                w = half[:, None] * g.weights[None, :]
                phi = rule_basis(rule, s)                                   # (J, P, q+1)
                kv = e(rule.nodes[:, None], s)
                G[:, :, a, b] = np.einsum("jp,jp,jpi->ji", w, kv, phi)
            else:
                for j, tj in enumerate(rule.nodes):
                    G[j, :, a, b] = self._adaptive(e, rule, tj)
        return G

    def history(self, m: int) -> np.ndarray:
        """``G[n-1, j, i, a, b]`` over past intervals ``n < m`` at targets ``t_{m,j}``."""
        rule = self.mesh.rule(m)
        targets = rule.nodes
        J = len(targets)
        nk = self.kernel.n
        G = np.zeros((m - 1, J, self.q + 1, nk, nk))
        if m == 1:
            return G
        for a, b, e in self.kernel.items():
            if self._use_gauss(e):
                G[:, :, :, a, b] = self._gauss_history(e, targets, m - 1, self.q + 1)
            elif self.mode == "fixed":
                if m > 2:
                    G[:m - 2, :, :, a, b] = self._gauss_history(e, targets, m - 2, FAR_FIELD_POINTS)
                src = self.mesh.rule(m - 1)
                for j, tj in enumerate(targets):
                    G[m - 2, j, :, a, b] = self._adaptive(e, src, tj)
            else:
                for n in range(1, m):
                    src = self.mesh.rule(n)
                    for j, tj in enumerate(targets):
                        G[n - 1, j, :, a, b] = self._adaptive(e, src, tj)
        return G


def rule_basis(rule: MappedRule, s: np.ndarray) -> np.ndarray:
    """Lagrange basis on ``rule.nodes`` evaluated at an array ``s``: ``s.shape + (q+1,)``."""
    return lagrange_basis(rule.nodes, s.ravel()).reshape(s.shape + (len(rule.nodes),))


# ---------------------------------------------------------------------------
# local assembly and stepping
# ---------------------------------------------------------------------------


def local_matrix(system: BlockSystem, lag: LagrangeData, rule: MappedRule,
                 kernel: KernelSpec | None = None, G_local: np.ndarray | None = None) -> sp.csc_matrix:
    """Left-hand side of one time step, shape ``((q+1) ndof, (q+1) ndof)``.

    Unknowns are ordered node-major: ``[c_{m,0}, ..., c_{m,q}]``.  The local
    memory block uses ``G_local`` (from :meth:`MomentEngine.local`); it may be
    omitted for a zero kernel.
    """
    w = rule.weights
    Wd = np.diag(w)
    time_part = Wd @ lag.D + np.outer(lag.left, lag.left)
    L = sp.kron(sp.csr_matrix(time_part), system.M0h) + sp.kron(sp.diags(w), system.M1h + system.Ah)
    if kernel is not None and not kernel.is_zero:
        if G_local is None:
            raise ValueError("a nonzero kernel needs its local moments")
        for a, b, _ in kernel.items():
            blk = Wd @ G_local[:, :, a, b]
            if np.any(blk):
                L = L + sp.kron(sp.csr_matrix(blk), system.embedded_cross(a, b))
    return L.tocsc()


def history_rhs(system: BlockSystem, rule: MappedRule, kernel: KernelSpec,
                G_hist: np.ndarray, past: np.ndarray) -> np.ndarray:
    """Memory contribution of intervals ``n < m`` to the right-hand side.

    ``G_hist`` has shape ``(m-1, q+1, q+1, n, n)`` and ``past`` holds the
    coefficients ``(m-1, q+1, ndof)``.  Returns ``(q+1, ndof)``.
    """
    J = len(rule.nodes)
    out = np.zeros((J, system.ndof))
    if kernel.is_zero or len(past) == 0:
        return out
    for a, b, _ in kernel.items():
        cb = system.block(past, b)                                   # (m-1, q+1, size_b)
        Wab = np.einsum("nji,nid->jd", G_hist[:, :, :, a, b], cb)     # (J, size_b)
        sl = slice(system.offsets[a], system.offsets[a + 1])
        out[:, sl] -= (system.cross[(a, b)] @ Wab.T).T
    return out * rule.weights[:, None]


def _factorize(L, m, q, k):
    try:
        return spla.splu(L)
    except RuntimeError as exc:
        dense = L.toarray()
        cond = np.linalg.cond(dense) if dense.shape[0] <= 4000 else np.inf
        raise SolverError(
            f"local system singular on interval m={m} (q={q}, k={k}, cond~{cond:.3e})"
        ) from exc


def step(m: int, system: BlockSystem, mesh: TimeMesh, kernel: KernelSpec, F: Callable,
         prev: np.ndarray, past: np.ndarray, engine: MomentEngine | None = None,
         k: int | None = None) -> np.ndarray:
    """Solve the local system of interval ``m``; returns ``(q+1, ndof)``.

    ``prev`` is the right-endpoint dof vector of interval ``m-1`` (the initial
    dofs for ``m = 1``); ``past`` holds coefficients of intervals ``1..m-1``.
    """
    rule = mesh.rule(m)
    lag = mesh.lagrange(m)
    if engine is None and not kernel.is_zero:
        engine = MomentEngine(kernel, mesh)
    G_loc = engine.local(m) if not kernel.is_zero else None
    L = local_matrix(system, lag, rule, kernel, G_loc)
    rhs = np.stack([w * system.load(F, t) for w, t in zip(rule.weights, rule.nodes)])
    rhs += np.outer(lag.left, system.M0h @ prev)
    if not kernel.is_zero and m > 1:
        rhs += history_rhs(system, rule, kernel, engine.history(m), past)
    lu = _factorize(L, m, mesh.q, k)
    return lu.solve(rhs.ravel()).reshape(rhs.shape)


def _build_system(problem: Problem, space, k, M1=None) -> BlockSystem:
    M1 = problem.M1 if M1 is None else M1
    if problem.spatial:
        if space is None:
            raise ValueError("a spatial problem needs a space mesh")
        if isinstance(space, int):
            space = SpaceMesh1D.uniform(space)
        return assemble_block_system(space, k, problem.M0, M1, problem.operator, problem.bcs)
    return OdeSystem(problem.M0, M1, problem.operator)


def _zero_source(problem):
    if problem.spatial:
        return lambda t, x: np.zeros((problem.n, len(x)))
    return lambda t, x: np.zeros(problem.n)


def solve(
    problem: Problem,
    mesh: TimeMesh,
    space: SpaceMesh1D | int | None = None,
    k: int = 1,
    *,
    history_quad: str = "fixed",
    quad_tol: float = 1e-12,
    source_tol: float = 1e-12,
    reformulated: bool = False,
    check_coercivity: bool = True,
) -> DiscreteSolution:
    """Run the time-stepping loop ``m = 1..M``.

    Parameters
    ----------
    problem : Problem
    mesh : TimeMesh
        Temporal mesh; ``mesh.rho`` is the weight parameter.
    space : SpaceMesh1D or int, optional
        Spatial mesh (an int means a uniform mesh with that many cells);
        ignored for space-free problems.
    k : int
        Spatial polynomial degree.
    history_quad : {"fixed", "adaptive"}
        See :class:`MomentEngine`.
    quad_tol, source_tol : float
        Tolerances of adaptive moment and manufactured-source quadrature.
    reformulated : bool
        Solve for ``V = exp(-rho t) U`` in the unweighted setting
        (``rho -> 0``, ``M1 -> M1 + rho M0``, ``K -> exp(-rho(t-s)) K``,
        ``F -> exp(-rho t) F``) and map back.  The discrete spaces differ
        from the weighted method unless ``rho = 0``, so the two agree only
        up to discretisation error in general.
    check_coercivity : bool
        Warn (:class:`CoercivityWarning`) when the discrete kernel norm
        exceeds ``gamma / 2``.  The solve proceeds either way.
    """
    if problem.source_mode == "manufactured":
        F = ManufacturedSource(problem, source_tol)
    else:
        F = problem.F if problem.F is not None else _zero_source(problem)

    if check_coercivity and not problem.kernel.is_zero:
        nrm = norm_discrete(problem.kernel, mesh, n_t=128, n_s=128)
        if nrm > problem.gamma / 2:
            warnings.warn(
                f"discrete kernel norm {nrm:.4g} exceeds gamma/2 = {problem.gamma / 2:.4g} "
                f"at rho={mesh.rho}; solvability is not guaranteed by the theory",
                CoercivityWarning,
                stacklevel=2,
            )

    rho = mesh.rho
    kernel = problem.kernel
    growth = 0.0
    M1 = None
    if reformulated:
        growth = rho
        M1 = problem.M1 + rho * problem.M0
        kernel = kernel.damped(rho)
        F_orig = F
        F = lambda t, x: np.exp(-rho * t) * np.asarray(F_orig(t, x), dtype=float)  # noqa: E731
        mesh = TimeMesh(mesh.points, mesh.q, 0.0)

    system = _build_system(problem, space, k, M1)
    x0 = problem.x0
    if x0 is None:
        x0dofs = np.zeros(system.ndof)
    else:
        x0dofs = system.interpolate(x0)

    engine = MomentEngine(kernel, mesh, history_quad, quad_tol) if not kernel.is_zero else None
    coeffs = np.zeros((mesh.M, mesh.q + 1, system.ndof))
    prev = x0dofs
    for m in range(1, mesh.M + 1):
        try:
            coeffs[m - 1] = step(m, system, mesh, kernel, F, prev, coeffs[:m - 1], engine, k)
        except SolverError:
            raise
        except Exception as exc:  # pragma: no cover - annotated re-raise
            raise SolverError(f"step m={m} failed: {exc}") from exc
        prev = coeffs[m - 1, -1]
    return DiscreteSolution(mesh, system, coeffs, x0dofs, growth,
                            info={"k": k, "history_quad": history_quad, "reformulated": reformulated})
