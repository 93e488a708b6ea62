"""Matrix-valued memory kernels ``K(t, s)`` and the operator ``T_K``.

Every scalar entry has the form ``scale * g(t, s) * (t - s)**(-alpha)`` with a
smooth factor ``g`` (``None`` meaning 1) and ``0 <= alpha < 1``.  Entries with
``alpha > 0`` carry an endpoint singularity hint so that every integral
touching the diagonal ``s = t`` goes through the substitution path of
:func:`~dgmemory.quadrature.adaptive_integrate`.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .quadrature import (
    SMOOTH,
    MappedRule,
    SingularityHint,
    adaptive_integrate,
    gauss_legendre,
    lagrange_basis,
)
from .timemesh import TimeMesh

__all__ = [
    "KernelEntry",
    "KernelSpec",
    "KernelNormReport",
    "zero_kernel",
    "constant_kernel",
    "power_kernel",
    "example1_kernel",
    "example2_kernel",
    "named_kernel",
    "eval_kernel",
    "apply_Tk",
    "history_moments",
    "fixed_history_moments",
    "norm_continuous",
    "norm_discrete",
    "kernel_norm_report",
    "rho_threshold",
]


@dataclass(frozen=True)
class KernelEntry:
    """One scalar kernel ``scale * factor(t, s) * (t - s)**(-alpha)``."""

    scale: float = 1.0
    alpha: float = 0.0
    factor: Callable | None = None
    label: str = ""

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"power exponent must lie in [0, 1), got {self.alpha}")

    @property
    def singular(self) -> bool:
        return self.alpha > 0.0

    @property
    def hint(self) -> SingularityHint:
        if self.singular:
            return SingularityHint("endpoint_power", self.alpha)
        return SMOOTH

    def __call__(self, t, s):
        t = np.asarray(t, dtype=float)
        s = np.asarray(s, dtype=float)
        val = np.full(np.broadcast(t, s).shape, self.scale)
        if self.factor is not None:
            val = val * self.factor(t, s)
        if self.singular:
            with np.errstate(divide="ignore"):
                val = val * (t - s) ** (-self.alpha)
        return val

    def at_lag(self, t, r):
        """Evaluate at ``s = t - r`` using the lag ``r`` directly (no cancellation)."""
        t = np.asarray(t, dtype=float)
        r = np.asarray(r, dtype=float)
        val = np.full(np.broadcast(t, r).shape, self.scale)
        if self.factor is not None:
            val = val * self.factor(t, t - r)
        if self.singular:
            with np.errstate(divide="ignore"):
                val = val * r ** (-self.alpha)
        return val

    def damped(self, rho: float) -> "KernelEntry":
        """The entry multiplied by ``exp(-rho (t - s))``."""
        g = self.factor

        if g is None:
            def factor(t, s):
                return np.exp(-rho * (t - s))
        else:
            def factor(t, s):
                return g(t, s) * np.exp(-rho * (t - s))

        return KernelEntry(self.scale, self.alpha, factor, f"{self.label}*exp(-{rho}(t-s))")


@dataclass(frozen=True)
class KernelSpec:
    """``n x n`` array of :class:`KernelEntry` (``None`` for a zero entry)."""

    entries: tuple
    name: str = "custom"

    def __post_init__(self):
        rows = tuple(tuple(r) for r in self.entries)
        n = len(rows)
        if n == 0 or any(len(r) != n for r in rows):
            raise ValueError("kernel entries must form a square array")
        object.__setattr__(self, "entries", rows)

    @property
    def n(self) -> int:
        return len(self.entries)

    @property
    def is_zero(self) -> bool:
        return next(self.items(), None) is None

    @property
    def singular(self) -> bool:
        return any(e.singular for _, _, e in self.items())

    def items(self):
        """Nonzero entries as ``(a, b, entry)``."""
        for a, row in enumerate(self.entries):
            for b, e in enumerate(row):
                if e is not None:
                    yield a, b, e

    def __call__(self, t, s) -> np.ndarray:
        return eval_kernel(self, t, s)

    def damped(self, rho: float) -> "KernelSpec":
        rows = [[None if e is None else e.damped(rho) for e in row] for row in self.entries]
        return KernelSpec(rows, f"{self.name}*exp(-rho(t-s))")


def _smooth(fn, label):
    return KernelEntry(1.0, 0.0, fn, label)


def zero_kernel(n: int = 1) -> KernelSpec:
    return KernelSpec([[None] * n for _ in range(n)], "zero")


def constant_kernel(c: float, n: int = 1) -> KernelSpec:
    """``c`` times the identity coupling (scalar for ``n = 1``)."""
    rows = [[KernelEntry(float(c), label=f"{c}") if a == b else None for b in range(n)] for a in range(n)]
    return KernelSpec(rows, f"scalar_const({c})")


def power_kernel(c: float, alpha: float) -> KernelSpec:
    return KernelSpec([[KernelEntry(float(c), float(alpha), label=f"{c}(t-s)^-{alpha}")]],
                      f"scalar_power({c},{alpha})")


def convolution_entry(fn: Callable, label: str = "l(t-s)") -> KernelEntry:
    """Smooth convolution entry ``fn(t - s)``."""
    return _smooth(lambda t, s: fn(t - s), label)


def example1_kernel() -> KernelSpec:
    """``((t-s, s), (t, (t-s)^2))``: smooth and bounded."""
    return KernelSpec(
        [
            [_smooth(lambda t, s: t - s, "t-s"), _smooth(lambda t, s: s + 0.0 * t, "s")],
            [_smooth(lambda t, s: t + 0.0 * s, "t"), _smooth(lambda t, s: (t - s) ** 2, "(t-s)^2")],
        ],
        "example1",
    )


def example2_kernel() -> KernelSpec:
    """``diag((t-s)^(-3/4), (t-s)^(-1/2))``: weakly singular."""
    return KernelSpec(
        [
            [KernelEntry(1.0, 0.75, label="(t-s)^-3/4"), None],
            [None, KernelEntry(1.0, 0.5, label="(t-s)^-1/2")],
        ],
        "example2_3",
    )


def named_kernel(spec: str) -> KernelSpec:
    """Look up a built-in kernel by name.

    Accepted: ``example1``, ``example2_3`` (alias ``example2``), ``zero``,
    ``zero(n)``, ``scalar_const(c)``, ``scalar_power(c, alpha)``.
    """
    m = re.fullmatch(r"\s*([a-z0-9_]+)\s*(?:\((.*)\))?\s*", spec)
    if not m:
        raise ValueError(f"cannot parse kernel {spec!r}")
    name, args = m.group(1), m.group(2)
    params = [float(x) for x in args.split(",")] if args else []
    if name == "example1" and not params:
        return example1_kernel()
    if name in ("example2_3", "example2", "example3") and not params:
        return example2_kernel()
    if name == "zero" and len(params) <= 1:
        return zero_kernel(int(params[0]) if params else 2)
    if name == "scalar_const" and len(params) == 1:
        return constant_kernel(params[0])
    if name == "scalar_power" and len(params) == 2:
        return power_kernel(*params)
    raise ValueError(f"unknown kernel {spec!r}")


def eval_kernel(K: KernelSpec, t: float, s: float) -> np.ndarray:
    """Evaluate ``K(t, s)`` entry-wise; singular entries require ``s < t``."""
    out = np.zeros((K.n, K.n))
    for a, b, e in K.items():
        if e.singular and not s < t:
            raise ValueError(f"singular kernel entry evaluated at s={s} >= t={t}")
        out[a, b] = e(t, s)
    return out


def _pieces(lo, hi, breakpoints):
    bps = () if breakpoints is None else np.asarray(breakpoints, dtype=float).ravel()
    pts = [lo] + [float(p) for p in np.unique(bps) if lo < p < hi] + [hi]
    return list(zip(pts[:-1], pts[1:]))


def apply_Tk(
    K: KernelSpec,
    f: Callable[[np.ndarray], np.ndarray],
    t: float,
    tol: float = 1e-12,
    breakpoints: Sequence[float] | None = None,
) -> np.ndarray:
    """``(T_K f)(t) = int_0^t K(t, s) f(s) ds``.

    ``f`` maps a 1-D array of times to an array of shape
    ``(len(s), n, *trailing)``; the result has shape ``(n, *trailing)``.
    Trailing axes (e.g. spatial points) are integrated jointly.
    Discontinuities of ``f`` should be listed in ``breakpoints``.
    """
    probe = np.asarray(f(np.array([0.0])), dtype=float)
    out = np.zeros(probe.shape[1:])
    if t <= 0:
        return out
    for a, b, e in K.items():
        hint = e.hint.located(t) if e.singular else SMOOTH

        def integrand(s, b=b, e=e):
            vals = np.asarray(f(s), dtype=float)[:, b]
            kv = e(t, s)
            return vals * kv.reshape((-1,) + (1,) * (vals.ndim - 1))

        pieces = _pieces(0.0, t, breakpoints)
        for lo, hi in pieces:
            out[a] += adaptive_integrate(integrand, lo, hi, tol / len(pieces), hint).value
    return out


def history_moments(
    K: KernelSpec, rule: MappedRule, t_star: float, tol: float = 1e-12
) -> np.ndarray:
    """Moments of ``K(t*, .)`` against the Lagrange basis of a source interval.

    Returns ``G`` of shape ``(q+1, n, n)`` with
    ``G[i, a, b] = int_{t0}^{min(t*, t1)} K_ab(t*, s) phi_i(s) ds`` where
    ``phi_i`` is the Lagrange basis on ``rule.nodes``.
    """
    if not t_star > rule.t0:
        raise ValueError("target time must exceed the start of the source interval")
    nodes = rule.nodes
    upper = min(t_star, rule.t1)
    G = np.zeros((len(nodes), K.n, K.n))
    for a, b, e in K.items():
        hint = e.hint.located(t_star) if e.singular else SMOOTH

        def integrand(s, e=e):
            return lagrange_basis(nodes, s) * e(t_star, s)[:, None]

        G[:, a, b] = adaptive_integrate(integrand, rule.t0, upper, tol, hint).value
    return G


def fixed_history_moments(
    K: KernelSpec, nodes: np.ndarray, t0: float, uppers: np.ndarray, targets: np.ndarray, npts: int
) -> np.ndarray:
    """Vectorised moments with a fixed ``npts``-point Gauss-Legendre rule.

    For each target ``targets[j]`` integrates over ``[t0, uppers[j]]``.
    Returns shape ``(len(targets), q+1, n, n)``.
    """
    g = gauss_legendre(npts)
    targets = np.asarray(targets, dtype=float)
    uppers = np.asarray(uppers, dtype=float)
    half = 0.5 * (uppers - t0)
    s = t0 + half[:, None] * (g.nodes[None, :] + 1.0)          # (J, P)
    w = half[:, None] * g.weights[None, :]                      # (J, P)
    phi = lagrange_basis(nodes, s.ravel()).reshape(s.shape + (len(nodes),))
    G = np.zeros((len(targets), len(nodes), K.n, K.n))
    for a, b, e in K.items():
        kv = e(targets[:, None], s)                             # (J, P)
        G[:, :, a, b] = np.einsum("jp,jp,jpi->ji", w, kv, phi)
    return G


# ---------------------------------------------------------------------------
# kernel norms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KernelNormReport:
    rho: float
    continuous_norm: float
    discrete_norm: float
    s_grid_size: int
    t_grid_size: int
    gamma: float
    satisfied: bool


def _reduce(values, n, reduction):
    if reduction == "max":
        return max(values)
    if reduction == "scaled":
        return n * max(values)
    raise ValueError(f"unknown reduction {reduction!r}")


def _first_term(e: KernelEntry, rho: float, tgrid: np.ndarray, tol: float) -> np.ndarray:
    """``int_0^t |e(t,s)| exp(-rho(t-s)) ds`` for every ``t`` in ``tgrid``."""
    tg = tgrid[tgrid > 0]
    if tg.size == 0:
        return np.zeros(1)

    # s = t (1 - v), v in [0, 1]; the singularity sits at v = 0
    def integrand(v):
        r = tg[None, :] * v[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.abs(e.at_lag(tg[None, :], r)) * np.exp(-rho * r) * tg[None, :]

    hint = e.hint.located(0.0) if e.singular else SMOOTH
    return adaptive_integrate(integrand, 0.0, 1.0, tol, hint).value


def _second_term_continuous(e, rho, T, sgrid, tol):
    sg = sgrid[sgrid < T]
    if sg.size == 0:
        return np.zeros(1)

    def integrand(v):
        span = (T - sg)[None, :]
        r = span * v[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.abs(e.at_lag(sg[None, :] + r, r)) * np.exp(-rho * r) * span

    hint = e.hint.located(0.0) if e.singular else SMOOTH
    return adaptive_integrate(integrand, 0.0, 1.0, tol, hint).value


def _grid(T, npts, extra=()):
    g = np.concatenate([np.linspace(0.0, T, npts), np.asarray(extra, dtype=float).ravel()])
    return np.unique(g)


def norm_continuous(
    K: KernelSpec,
    rho: float,
    T: float,
    n_t: int = 512,
    n_s: int = 512,
    extra_points=(),
    tol: float = 1e-10,
    reduction: str = "max",
) -> float:
    """Grid estimate of ``||K||_{1,rho,unif}`` on ``[0, T]``.

    Both suprema are taken over uniform grids (plus ``extra_points``), so the
    value is a lower bound of the true essential supremum.  Matrix kernels are
    reduced entry-wise: ``reduction="max"`` takes the largest scalar entry norm,
    ``"scaled"`` multiplies it by ``n`` (a bound for the induced operator).
    """
    if K.is_zero:
        return 0.0
    tgrid = _grid(T, n_t, extra_points)
    sgrid = _grid(T, n_s, extra_points)
    vals = []
    for _, _, e in K.items():
        vals.append(float(_first_term(e, rho, tgrid, tol).max()))
        vals.append(float(_second_term_continuous(e, rho, T, sgrid, tol).max()))
    return _reduce(vals, K.n, reduction)


def _second_term_discrete(e, rho, rules: Sequence[MappedRule], sgrid, chunk=256):
    nodes = np.array([r.nodes for r in rules])                  # (M, q+1)
    logw = np.log(np.array([r.weights for r in rules]))
    t0 = np.array([r.t0 for r in rules])[:, None]
    tn = nodes.ravel()[None, :]
    base = (logw + rho * nodes - 2.0 * rho * t0).ravel()[None, :]
    out = np.empty(len(sgrid))
    for start in range(0, len(sgrid), chunk):
        sg = sgrid[start:start + chunk, None]
        mask = tn > sg if e.singular else tn >= sg
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            kv = np.abs(e.at_lag(tn, np.where(mask, tn - sg, 1.0)))
            terms = np.where(mask, kv * np.exp(base + rho * sg), 0.0)
        out[start:start + chunk] = terms.sum(axis=1)
    return out


def norm_discrete(
    K: KernelSpec,
    mesh,
    rho: float | None = None,
    n_t: int = 512,
    n_s: int = 512,
    tol: float = 1e-10,
    reduction: str = "max",
) -> float:
    """Grid estimate of the semi-discrete norm ``||K||_{Q,1,rho,unif}``.

    ``mesh`` is a :class:`~dgmemory.timemesh.TimeMesh`.  The first term is the
    continuous one; the second replaces the ``t`` integral by the weighted
    Radau sums of the mesh.  For smooth entries the ``s`` grid contains a
    uniform grid, all mesh points and all Radau nodes (where the quadrature
    sum jumps).  For weakly singular entries the sum is unbounded as ``s``
    approaches a node from below, so any uniform grid only measures its own
    distance to the nodes; these entries are sampled at the mesh points and
    nodes alone, with a node coinciding with ``s`` dropped (right limit).
    """
    if K.is_zero:
        return 0.0
    if rho is not None and rho != mesh.rho:
        mesh = TimeMesh(mesh.points, mesh.q, rho)
    rho = mesh.rho
    T = mesh.T
    rules = [mesh.rule(m) for m in range(1, mesh.M + 1)]
    nodes = np.array([r.nodes for r in rules]).ravel()
    tgrid = _grid(T, n_t, mesh.points)
    structural = np.unique(np.concatenate([mesh.points, nodes]))
    sgrid = _grid(T, n_s, structural)
    vals = []
    for _, _, e in K.items():
        vals.append(float(_first_term(e, rho, tgrid, tol).max()))
        grid = structural if e.singular else sgrid
        vals.append(float(_second_term_discrete(e, rho, rules, grid).max()))
    return _reduce(vals, K.n, reduction)


def kernel_norm_report(K: KernelSpec, mesh, gamma: float, **kw) -> KernelNormReport:
    n_t = kw.get("n_t", 512)
    n_s = kw.get("n_s", 512)
    cont = norm_continuous(K, mesh.rho, mesh.T, extra_points=mesh.points, **kw)
    disc = norm_discrete(K, mesh, **kw)
    return KernelNormReport(
        rho=mesh.rho,
        continuous_norm=cont,
        discrete_norm=disc,
        s_grid_size=n_s,
        t_grid_size=n_t,
        gamma=gamma,
        satisfied=disc <= gamma / 2,
    )


def rho_threshold(K: KernelSpec, gamma: float, mesh, candidates: Sequence[float], **kw):
    """First ``rho`` among ascending ``candidates`` with discrete norm ``<= gamma/2``.

    Returns ``None`` when no candidate qualifies.  The discrete norm is not
    known to be monotone in ``rho``, hence a scan rather than a root search.
    """
    cands = list(candidates)
    if cands != sorted(cands):
        raise ValueError("candidates must be sorted ascending")
    for rho in cands:
        trial = TimeMesh(mesh.points, mesh.q, rho)
        if norm_discrete(K, trial, **kw) <= gamma / 2:
            return rho
    return None
