"""Continuous Lagrange finite elements on ``(0, 1)`` and block assembly.

The block system couples ``n`` scalar components, each discretised in its own
``P_k`` space.  The only spatial operator provided is the skew block

    A = ((0, d/dx), (d/dx with zero boundary values, 0))

acting on ``(u, v)`` with ``u`` in ``H^1_0`` and ``v`` in ``H^1``.  Its
discrete form is assembled as ``((0, B), (-B^T, 0))`` so that skew-symmetry
holds bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .quadrature import gauss_legendre, lagrange_basis, lagrange_derivative_matrix

__all__ = [
    "SpaceMesh1D",
    "FeSpace",
    "BlockSystem",
    "FeBlockSystem",
    "OdeSystem",
    "assemble_block_system",
    "interpolate_dofs",
    "eval_fe",
]

BCS = ("none", "dirichlet_both")


@dataclass(frozen=True)
class SpaceMesh1D:
    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 1 or len(v) < 2 or np.any(np.diff(v) <= 0):
            raise ValueError("vertices must increase strictly")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @classmethod
    def uniform(cls, N: int, a: float = 0.0, b: float = 1.0) -> "SpaceMesh1D":
        v = np.linspace(a, b, N + 1)
        v[0], v[-1] = a, b
        return cls(v)

    @property
    def N(self) -> int:
        return len(self.vertices) - 1

    @property
    def h(self) -> float:
        return float(np.diff(self.vertices).max())

    def locate(self, x) -> np.ndarray:
        """Cell index of each point; interior vertices go to the right cell."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        lo, hi = self.vertices[0], self.vertices[-1]
        if np.any(x < lo) or np.any(x > hi):
            raise ValueError(f"points outside [{lo}, {hi}]")
        return np.clip(np.searchsorted(self.vertices, x, side="right") - 1, 0, self.N - 1)


@dataclass(frozen=True)
class FeSpace:
    """Continuous ``P_k`` space with equispaced local Lagrange nodes."""

    mesh: SpaceMesh1D
    k: int
    bc: str = "none"
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("polynomial degree must be >= 1")
        if self.bc not in BCS:
            raise ValueError(f"unknown boundary condition {self.bc!r}")

    @property
    def ref_nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.k + 1)

    @property
    def n_nodes(self) -> int:
        return self.mesh.N * self.k + 1

    @property
    def node_coords(self) -> np.ndarray:
        """All Lagrange node positions, including eliminated boundary nodes."""
        v = self.mesh.vertices
        h = np.diff(v)
        inner = v[:-1, None] + h[:, None] * self.ref_nodes[None, :-1]
        return np.concatenate([inner.ravel(), v[-1:]])

    @property
    def free(self) -> np.ndarray:
        """Global node indices that carry a degree of freedom."""
        idx = np.arange(self.n_nodes)
        return idx[1:-1] if self.bc == "dirichlet_both" else idx

    @property
    def ndof(self) -> int:
        return len(self.free)

    @property
    def dof_coords(self) -> np.ndarray:
        return self.node_coords[self.free]

    @property
    def cell_dofs(self) -> np.ndarray:
        """``(N, k+1)`` map cell/local node -> dof index, ``-1`` if eliminated."""
        glob = np.arange(self.mesh.N)[:, None] * self.k + np.arange(self.k + 1)[None, :]
        if self.bc == "dirichlet_both":
            out = glob - 1
            out[(glob == 0) | (glob == self.n_nodes - 1)] = -1
            return out
        return glob

    def _tabulate(self, cells, xref, deriv=False):
        """Sparse matrix of basis values (or x-derivatives) at given points."""
        vals = lagrange_basis(self.ref_nodes, xref)
        if deriv:
            D = lagrange_derivative_matrix(self.ref_nodes)
            # derivative of phi_i at xref via interpolation of the nodal derivatives
            vals = vals @ D
            h = np.diff(self.mesh.vertices)[cells]
            vals = vals / h[:, None]
        dofs = self.cell_dofs[cells]
        keep = dofs >= 0
        rows = np.broadcast_to(np.arange(len(cells))[:, None], dofs.shape)
        return sp.csr_matrix(
            (vals[keep], (rows[keep], dofs[keep])), shape=(len(cells), self.ndof)
        )

    def eval_matrix(self, x, deriv=False) -> sp.csr_matrix:
        """``E[p, j] = psi_j(x_p)`` (or ``psi_j'(x_p)``)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        cells = self.mesh.locate(x)
        v = self.mesh.vertices
        xref = (x - v[cells]) / (v[cells + 1] - v[cells])
        return self._tabulate(cells, xref, deriv)

    def quadrature_points(self, npts: int):
        """Gauss points of every cell: ``(x, w, cells, xref)`` flattened cell by cell."""
        g = gauss_legendre(npts)
        xref = 0.5 * (g.nodes + 1.0)
        v = self.mesh.vertices
        h = np.diff(v)
        x = (v[:-1, None] + h[:, None] * xref[None, :]).ravel()
        w = (h[:, None] * 0.5 * g.weights[None, :]).ravel()
        cells = np.repeat(np.arange(self.mesh.N), npts)
        return x, w, cells, np.tile(xref, self.mesh.N)

    def quad_matrix(self, npts: int, deriv=False) -> sp.csr_matrix:
        key = ("qm", npts, deriv)
        if key not in self._cache:
            _, _, cells, xref = self.quadrature_points(npts)
            self._cache[key] = self._tabulate(cells, xref, deriv)
        return self._cache[key]


def interpolate_dofs(space: FeSpace, g: Callable, tol: float = 1e-12) -> np.ndarray:
    """Nodal interpolant of ``g``.

    Under ``dirichlet_both`` the function must vanish at both end points;
    a violation raises rather than being silently zeroed.
    """
    coords = space.node_coords
    vals = np.asarray(g(coords), dtype=float) * np.ones_like(coords)
    if space.bc == "dirichlet_both":
        scale = max(1.0, float(np.abs(vals).max()))
        if abs(vals[0]) > tol * scale or abs(vals[-1]) > tol * scale:
            raise ValueError(
                f"boundary values {vals[0]:.3e}, {vals[-1]:.3e} violate the "
                "homogeneous Dirichlet condition"
            )
    return vals[space.free]


def eval_fe(space: FeSpace, dofs, x) -> np.ndarray:
    """Evaluate the finite element function with coefficients ``dofs`` at ``x``."""
    return space.eval_matrix(x) @ np.asarray(dofs, dtype=float)


def _mass(sa: FeSpace, sb: FeSpace, npts: int, deriv_b=False) -> sp.csr_matrix:
    _, w, _, _ = sa.quadrature_points(npts)
    Pa = sa.quad_matrix(npts)
    Pb = sb.quad_matrix(npts, deriv=deriv_b)
    return (Pa.T @ sp.diags(w) @ Pb).tocsr()


class BlockSystem:
    """Assembled spatial matrices of an ``n``-component problem.

    Attributes
    ----------
    n : int
        Number of components.
    sizes : list of int
        Degrees of freedom per component; ``offsets`` are their starts.
    M0h, M1h, Ah : scipy.sparse matrices
        Block mass matrices weighted by ``M0``, ``M1`` and the skew operator.
    cross : dict
        ``cross[(a, b)]`` is the (rectangular) mass matrix ``<psi^b_j, psi^a_i>``.
    """

    def __init__(self, n, sizes, M0, M1, M0h, M1h, Ah, cross):
        self.n = n
        self.sizes = list(sizes)
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)])
        self.M0 = np.asarray(M0, dtype=float)
        self.M1 = np.asarray(M1, dtype=float)
        self.M0h = M0h.tocsr()
        self.M1h = M1h.tocsr()
        self.Ah = Ah.tocsr()
        self.cross = cross
        self._embedded = {}

    @property
    def ndof(self) -> int:
        return int(self.offsets[-1])

    def block(self, vec, a):
        return vec[..., self.offsets[a]:self.offsets[a + 1]]

    def embedded_cross(self, a: int, b: int) -> sp.csr_matrix:
        """``cross[(a, b)]`` placed in block position ``(a, b)`` of a full matrix."""
        if (a, b) not in self._embedded:
            blocks = [[None] * self.n for _ in range(self.n)]
            for i in range(self.n):
                blocks[i][i] = sp.csr_matrix((self.sizes[i], self.sizes[i]))
            blocks[a][b] = self.cross[(a, b)]
            self._embedded[(a, b)] = sp.bmat(blocks, format="csr")
        return self._embedded[(a, b)]

    def norm_sq(self, vec, weighted=False) -> float:
        """Squared ``H`` norm of a discrete state (``M0``-weighted if asked)."""
        mat = self.M0h if weighted else self._plain_mass()
        return float(vec @ (mat @ vec))

    def _plain_mass(self):
        if "plain" not in self._embedded:
            self._embedded["plain"] = sp.block_diag(
                [self.cross[(a, a)] for a in range(self.n)], format="csr"
            )
        return self._embedded["plain"]


class FeBlockSystem(BlockSystem):
    def __init__(self, spaces: Sequence[FeSpace], M0, M1, operator=None, load_points=None):
        spaces = list(spaces)
        n = len(spaces)
        M0 = np.atleast_2d(np.asarray(M0, dtype=float))
        M1 = np.atleast_2d(np.asarray(M1, dtype=float))
        if M0.shape != (n, n) or M1.shape != (n, n):
            raise ValueError("coefficient matrices must be n x n")
        if not np.allclose(M0, M0.T):
            raise ValueError("M0 must be symmetric")
        k = max(s.k for s in spaces)
        npts = k + 1
        cross = {(a, b): _mass(spaces[a], spaces[b], npts) for a in range(n) for b in range(n)}

        def weighted(C):
            return sp.bmat(
                [[C[a, b] * cross[(a, b)] if C[a, b] != 0 else None for b in range(n)]
                 for a in range(n)],
                format="csr",
            ) if np.any(C) else sp.csr_matrix((sum(s.ndof for s in spaces),) * 2)

        M0h = _with_shape(weighted(M0), spaces)
        M1h = _with_shape(weighted(M1), spaces)
        if operator is None:
            Ah = sp.csr_matrix((M0h.shape[0], M0h.shape[0]))
        elif operator == "grad":
            if n != 2 or spaces[0].bc != "dirichlet_both" or spaces[1].bc != "none":
                raise ValueError(
                    "the gradient block needs (u, v) with u Dirichlet and v free"
                )
            B = _mass(spaces[0], spaces[1], npts, deriv_b=True)   # <d/dx psi^v_j, psi^u_i>
            Ah = sp.bmat([[None, B], [-B.T, None]], format="csr")
        else:
            raise ValueError(f"unknown spatial operator {operator!r}")
        super().__init__(n, [s.ndof for s in spaces], M0, M1, M0h, M1h, Ah, cross)
        self.spaces = spaces
        self.operator = operator
        self.load_points = load_points or npts
        if self.M0h.shape[0] == 0 or np.any(np.asarray(self.sizes) == 0):
            raise ValueError("empty finite element space (mesh too coarse for the bc)")

    @property
    def k(self) -> int:
        return max(s.k for s in self.spaces)

    def load(self, F: Callable, t: float) -> np.ndarray:
        """``<F(t, .), psi_i>`` by Gauss quadrature; ``F(t, x)`` returns ``(n, len(x))``."""
        x, w, _, _ = self.spaces[0].quadrature_points(self.load_points)
        vals = np.asarray(F(t, x), dtype=float).reshape(self.n, len(x))
        return np.concatenate(
            [s.quad_matrix(self.load_points).T @ (w * vals[a]) for a, s in enumerate(self.spaces)]
        )

    def interpolate(self, g: Callable) -> np.ndarray:
        """Nodal interpolation of ``g(x) -> (n, len(x))``."""
        parts = []
        for a, s in enumerate(self.spaces):
            parts.append(interpolate_dofs(s, lambda x, a=a: np.asarray(g(x), dtype=float)[a]))
        return np.concatenate(parts)

    def eval_matrices(self, x):
        return [s.eval_matrix(x) for s in self.spaces]

    def evaluate(self, dofs, x) -> np.ndarray:
        """Values of all components at ``x``, shape ``(n, len(x))``."""
        x = np.atleast_1d(x)
        return np.stack(
            [s.eval_matrix(x) @ self.block(np.asarray(dofs), a) for a, s in enumerate(self.spaces)]
        )


def _with_shape(mat, spaces):
    size = sum(s.ndof for s in spaces)
    if mat.shape != (size, size):
        mat = sp.csr_matrix(mat, shape=(size, size))
    return mat


class OdeSystem(BlockSystem):
    """Space-free system: one unit-mass degree of freedom per component.

    ``F(t, x)`` is called with ``x=None`` and must return a length-``n``
    vector; initial data is given directly as a vector.
    """

    def __init__(self, M0, M1, A=None):
        M0 = np.atleast_2d(np.asarray(M0, dtype=float))
        M1 = np.atleast_2d(np.asarray(M1, dtype=float))
        n = M0.shape[0]
        A = np.zeros((n, n)) if A is None else np.atleast_2d(np.asarray(A, dtype=float))
        if not np.allclose(A, -A.T):
            raise ValueError("A must be skew-symmetric")
        cross = {(a, b): sp.csr_matrix(np.ones((1, 1))) for a in range(n) for b in range(n)}
        super().__init__(n, [1] * n, M0, M1, sp.csr_matrix(M0), sp.csr_matrix(M1),
                         sp.csr_matrix(A), cross)

    def load(self, F, t):
        return np.asarray(F(t, None), dtype=float).reshape(self.n)

    def interpolate(self, g):
        return np.asarray(g(None) if callable(g) else g, dtype=float).reshape(self.n)

    def evaluate(self, dofs, x=None):
        return np.asarray(dofs, dtype=float).reshape(self.n, 1)


def assemble_block_system(
    mesh: SpaceMesh1D,
    k: int,
    M0,
    M1,
    operator: str | None = "grad",
    bcs: Sequence[str] | None = None,
) -> FeBlockSystem:
    """Assemble the block matrices for ``n`` components in ``P_k``.

    With ``operator="grad"`` the two components default to
    ``("dirichlet_both", "none")``.
    """
    n = np.atleast_2d(M0).shape[0]
    if bcs is None:
        bcs = ("dirichlet_both", "none") if operator == "grad" else ("none",) * n
    spaces = [FeSpace(mesh, k, bc) for bc in bcs]
    return FeBlockSystem(spaces, M0, M1, operator)
