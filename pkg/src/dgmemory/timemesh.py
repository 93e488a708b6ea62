"""Temporal partitions ``0 = t_0 < ... < t_M = T`` with their Radau data."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .quadrature import MappedRule, lagrange_basis, lagrange_derivative_matrix, radau_on_interval


@dataclass(frozen=True)
class LagrangeData:
    """Temporal Lagrange basis on the Radau nodes of one interval.

    ``D[j, i] = phi_i'(t_j)`` and ``left[i] = phi_i(t_{m-1}^+)``.
    """

    nodes: np.ndarray
    D: np.ndarray
    left: np.ndarray

    @classmethod
    def from_rule(cls, rule: MappedRule) -> "LagrangeData":
        D = lagrange_derivative_matrix(rule.nodes)
        left = lagrange_basis(rule.nodes, [rule.t0])[0]
        return cls(nodes=rule.nodes, D=D, left=left)

    def basis(self, t) -> np.ndarray:
        return lagrange_basis(self.nodes, t)


@dataclass(frozen=True)
class TimeMesh:
    points: np.ndarray
    q: int
    rho: float = 1.0
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or len(pts) < 2 or pts[0] != 0.0 or np.any(np.diff(pts) <= 0):
            raise ValueError("time points must start at 0 and increase strictly")
        if self.q < 0 or self.rho < 0:
            raise ValueError("need q >= 0 and rho >= 0")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def uniform(cls, T: float, M: int, q: int, rho: float = 1.0) -> "TimeMesh":
        pts = np.linspace(0.0, T, M + 1)
        pts[-1] = T
        return cls(pts, q, rho)

    @property
    def T(self) -> float:
        return float(self.points[-1])

    @property
    def M(self) -> int:
        return len(self.points) - 1

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.points)

    def interval(self, m: int) -> tuple[float, float]:
        """``I_m = (t_{m-1}, t_m]`` for ``m = 1..M``."""
        return float(self.points[m - 1]), float(self.points[m])

    def rule(self, m: int, q: int | None = None) -> MappedRule:
        q = self.q if q is None else q
        key = ("rule", m, q)
        if key not in self._cache:
            t0, t1 = self.interval(m)
            self._cache[key] = radau_on_interval(q, t0, t1, self.rho)
        return self._cache[key]

    def lagrange(self, m: int) -> LagrangeData:
        key = ("lag", m)
        if key not in self._cache:
            self._cache[key] = LagrangeData.from_rule(self.rule(m))
        return self._cache[key]

    def all_nodes(self) -> np.ndarray:
        """Radau nodes of all intervals, shape ``(M, q+1)``."""
        return np.array([self.rule(m).nodes for m in range(1, self.M + 1)])

    def locate(self, t) -> np.ndarray:
        """Interval index ``m`` with ``t in (t_{m-1}, t_m]``; ``t = 0`` maps to 1."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t < 0) or np.any(t > self.T):
            raise ValueError(f"time outside [0, {self.T}]")
        m = np.searchsorted(self.points, t, side="left")
        return np.maximum(m, 1)
