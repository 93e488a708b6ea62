"""Quadrature rules used by the space-time solver.

Three kinds of rules live here:

* exponentially weighted right Gauss-Radau rules on ``(-1, 1]`` for the
  weight ``exp(-a (s + 1))`` and their affine images on time intervals,
* plain Gauss-Legendre rules (spatial integration, fixed history rule),
* a vectorised adaptive Gauss-Kronrod integrator with a change of variables
  that removes algebraic endpoint singularities ``|c - s|**(-alpha)``.

The Radau rules are built from the modified moments of the weight with the
Chebyshev algorithm, carried out in extended precision with :mod:`mpmath`,
followed by Golub's Radau modification of the Jacobi matrix.
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass
from typing import Callable, NamedTuple

import mpmath
import numpy as np

__all__ = [
    "RadauRule",
    "MappedRule",
    "GaussRule",
    "SingularityHint",
    "QuadResult",
    "QuadratureWarning",
    "weighted_moments",
    "build_radau",
    "map_rule",
    "radau_on_interval",
    "gauss_legendre",
    "adaptive_integrate",
    "lagrange_basis",
    "lagrange_derivative_matrix",
]


class QuadratureWarning(UserWarning):
    """Adaptive quadrature stopped before reaching the requested tolerance."""


def _frozen(x) -> np.ndarray:
    arr = np.array(x, dtype=float)
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# weighted Gauss-Radau
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RadauRule:
    """Right Gauss-Radau rule on ``(-1, 1]`` for the weight ``exp(-a(s+1))``.

    ``ref_nodes[-1]`` is exactly ``1.0``; the rule integrates every
    polynomial of degree ``<= 2q`` exactly against the weight.
    """

    q: int
    a: float
    ref_nodes: np.ndarray
    ref_weights: np.ndarray

    @property
    def size(self) -> int:
        return self.q + 1


@dataclass(frozen=True)
class MappedRule:
    """Weighted Radau rule transported to a time interval ``(t0, t1]``.

    Integrates ``exp(-2 rho (t - t0)) p(t)`` over the interval exactly for
    ``deg p <= 2q``.
    """

    t0: float
    t1: float
    rho: float
    q: int
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def tau(self) -> float:
        return self.t1 - self.t0

    def __call__(self, values) -> np.ndarray:
        """Apply the rule to samples at :attr:`nodes` (leading axis)."""
        return np.tensordot(self.weights, np.asarray(values, dtype=float), axes=(0, 0))


def _mp_moments(nmom: int, a: float, dps: int) -> list:
    """Moments ``int_{-1}^{1} s^j exp(-a(s+1)) ds`` for ``j < nmom``."""
    with mpmath.workdps(dps):
        if a == 0:
            return [mpmath.mpf(1 + (-1) ** j) / (j + 1) for j in range(nmom)]
        a_mp = mpmath.mpf(a)
        # int_0^2 u^l exp(-a u) du = gamma_lower(l+1, 2a) / a^(l+1), with u = s + 1
        base = [
            mpmath.gammainc(l + 1, 0, 2 * a_mp) / a_mp ** (l + 1) for l in range(nmom)
        ]
        out = []
        for j in range(nmom):
            acc = mpmath.mpf(0)
            for l in range(j + 1):
                acc += mpmath.binomial(j, l) * (-1) ** (j - l) * base[l]
            out.append(acc)
        return out


def weighted_moments(j: int, a: float) -> float:
    """Return ``int_{-1}^{1} s**j * exp(-a (s + 1)) ds``.

    The value is evaluated in extended precision and rounded once, so it is
    accurate to working precision for every ``a >= 0`` including the
    ``a -> 0`` limit ``(1 + (-1)**j) / (j + 1)``.
    """
    if j < 0:
        raise ValueError("moment index must be non-negative")
    if a < 0 or not math.isfinite(a):
        raise ValueError(f"weight parameter must be finite and >= 0, got {a}")
    return float(_mp_moments(j + 1, float(a), 40 + 2 * j)[j])


def _chebyshev_recurrence(mom, n):
    """Recurrence coefficients ``alpha_k, beta_k`` (k < n) from ordinary moments."""
    alpha = [mom[1] / mom[0]]
    beta = [mom[0]]
    sig_prev = [mpmath.mpf(0)] * (2 * n)
    sig = list(mom[: 2 * n])
    for k in range(1, n):
        new = [mpmath.mpf(0)] * (2 * n)
        for l in range(k, 2 * n - k):
            new[l] = sig[l + 1] - alpha[k - 1] * sig[l] - beta[k - 1] * sig_prev[l]
        alpha.append(new[k + 1] / new[k] - sig[k] / sig[k - 1])
        beta.append(new[k] / sig[k - 1])
        sig_prev, sig = sig, new
    return alpha, beta


@functools.lru_cache(maxsize=512)
def _radau_cached(q: int, a: float) -> RadauRule:
    n = q + 1
    dps = 50 + 4 * q
    with mpmath.workdps(dps):
        mom = _mp_moments(2 * n, a, dps)
        alpha, beta = _chebyshev_recurrence(mom, n)
        if any(b <= 0 for b in beta):
            raise ValueError(
                f"moment recurrence lost positivity for q={q}, a={a}; "
                "weight parameter too large for the requested degree"
            )
        # monic orthogonal polynomials at s = 1 fix the modified last diagonal
        p_prev, p_cur = mpmath.mpf(0), mpmath.mpf(1)
        for k in range(q):
            p_prev, p_cur = p_cur, (1 - alpha[k]) * p_cur - beta[k] * p_prev
        diag = list(alpha[:q]) + [1 - beta[q] * p_prev / p_cur if q > 0 else mpmath.mpf(1)]
        jac = mpmath.zeros(n, n)
        for k in range(n):
            jac[k, k] = diag[k]
        for k in range(1, n):
            off = mpmath.sqrt(beta[k])
            jac[k, k - 1] = off
            jac[k - 1, k] = off
        if n == 1:
            evals, evecs = [diag[0]], mpmath.matrix([[1]])
        else:
            evals, evecs = mpmath.eigsy(jac)
        order = sorted(range(n), key=lambda i: evals[i])
        nodes = [float(evals[i]) for i in order]
        weights = [float(beta[0] * evecs[0, i] ** 2) for i in order]
    nodes[-1] = 1.0
    if any(w <= 0 for w in weights) or any(
        nodes[i] >= nodes[i + 1] for i in range(q)
    ):
        raise ValueError(f"degenerate Radau rule for q={q}, a={a}")
    return RadauRule(q=q, a=a, ref_nodes=_frozen(nodes), ref_weights=_frozen(weights))


def build_radau(q: int, a: float = 0.0) -> RadauRule:
    """Right Gauss-Radau rule with ``q+1`` nodes for the weight ``exp(-a(s+1))``.

    Parameters
    ----------
    q : int
        Polynomial degree in time; the rule has ``q + 1`` nodes and is exact
        for polynomials of degree ``2q``.
    a : float
        Reference decay parameter, ``rho * tau`` for an interval of length
        ``tau``.

    Raises
    ------
    ValueError
        If the recurrence breaks down (reported with the offending ``q, a``).
    """
    if q < 0:
        raise ValueError("q must be >= 0")
    a = float(a)
    if a < 0 or not math.isfinite(a):
        raise ValueError(f"weight parameter must be finite and >= 0, got {a}")
    return _radau_cached(int(q), a)


def map_rule(rule: RadauRule, interval, rho: float) -> MappedRule:
    """Affinely map a reference rule to ``interval = (t0, t1]``.

    The reference rule must have been built with ``a = rho * (t1 - t0)``.
    """
    t0, t1 = float(interval[0]), float(interval[1])
    tau = t1 - t0
    if not tau > 0:
        raise ValueError(f"empty interval ({t0}, {t1}]")
    expected = rho * tau
    if abs(rule.a - expected) > 1e-12 * max(1.0, abs(expected)):
        raise ValueError(
            f"rule built for a={rule.a} but interval/rho imply a={expected}"
        )
    nodes = t0 + 0.5 * tau * (rule.ref_nodes + 1.0)
    nodes[-1] = t1
    return MappedRule(
        t0=t0,
        t1=t1,
        rho=float(rho),
        q=rule.q,
        nodes=_frozen(nodes),
        weights=_frozen(0.5 * tau * rule.ref_weights),
    )


def radau_on_interval(q: int, t0: float, t1: float, rho: float) -> MappedRule:
    """Shorthand for ``map_rule(build_radau(q, rho*tau), (t0, t1), rho)``."""
    return map_rule(build_radau(q, rho * (t1 - t0)), (t0, t1), rho)


# ---------------------------------------------------------------------------
# Gauss-Legendre
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussRule:
    n: int
    nodes: np.ndarray
    weights: np.ndarray

    def on(self, a: float, b: float):
        """Nodes and weights mapped to ``[a, b]``."""
        half = 0.5 * (b - a)
        return a + half * (self.nodes + 1.0), half * self.weights


@functools.lru_cache(maxsize=64)
def gauss_legendre(n: int) -> GaussRule:
    """``n``-point Gauss-Legendre rule on ``[-1, 1]``."""
    if n < 1:
        raise ValueError("need at least one node")
    x, w = np.polynomial.legendre.leggauss(n)
    return GaussRule(n=n, nodes=_frozen(x), weights=_frozen(w))


# ---------------------------------------------------------------------------
# adaptive Gauss-Kronrod
# ---------------------------------------------------------------------------

# QUADPACK qk15 abscissae/weights
_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])
_KR_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
_KR_WEIGHTS = np.concatenate([_WGK[:-1], _WGK[::-1]])
_G_WEIGHTS = np.zeros(15)
_G_WEIGHTS[1:7:2] = _WG[:3]
_G_WEIGHTS[7] = _WG[3]
_G_WEIGHTS[9:15:2] = _WG[2::-1]


@dataclass(frozen=True)
class SingularityHint:
    """Describes how an integrand behaves near its singular point.

    ``endpoint_power`` means the integrand is ``|at - s|**(-alpha)`` times a
    smooth function, where ``at`` lies on or beyond an endpoint of the
    integration interval (``None`` means the upper endpoint).
    """

    kind: str = "smooth"
    alpha: float = 0.0
    at: float | None = None

    def __post_init__(self):
        if self.kind not in ("smooth", "endpoint_power"):
            raise ValueError(f"unknown singularity kind {self.kind!r}")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"exponent must lie in [0, 1), got {self.alpha}")

    @property
    def singular(self) -> bool:
        return self.kind == "endpoint_power" and self.alpha > 0.0

    def located(self, at: float) -> "SingularityHint":
        return SingularityHint(self.kind, self.alpha, at)


SMOOTH = SingularityHint()


class QuadResult(NamedTuple):
    value: np.ndarray
    error: float
    converged: bool


_MAX_PANELS = 4096


def _gk_adaptive(h, lo, hi, tol, max_depth):
    """Breadth-first adaptive G7/K15 on ``[lo, hi]`` for vectorised ``h``."""
    length = hi - lo
    panels = np.array([[lo, hi]])
    total = None
    err_total = 0.0
    converged = True
    depth = 0
    while panels.size:
        mid = 0.5 * (panels[:, 0] + panels[:, 1])
        half = 0.5 * (panels[:, 1] - panels[:, 0])
        pts = (mid[:, None] + half[:, None] * _KR_NODES[None, :]).ravel()
        vals = np.asarray(h(pts), dtype=float)
        tail = vals.shape[1:]
        vals = vals.reshape((len(panels), 15) + tail)
        kron = np.tensordot(vals, _KR_WEIGHTS, axes=(1, 0))
        gauss = np.tensordot(vals, _G_WEIGHTS, axes=(1, 0))
        scale = half.reshape((-1,) + (1,) * len(tail))
        kron = kron * scale
        diff = np.abs(kron - gauss * scale)
        mag = np.tensordot(np.abs(vals), _KR_WEIGHTS, axes=(1, 0)) * scale
        if tail:
            axes = tuple(range(1, 1 + len(tail)))
            err = diff.max(axis=axes)
            floor = 100 * np.finfo(float).eps * mag.max(axis=axes)
        else:
            err, floor = diff, 100 * np.finfo(float).eps * mag
        err = np.where(np.isfinite(err), err, np.inf)
        allowed = np.maximum(tol * (2 * half) / length, floor)
        done = err <= allowed
        if depth >= max_depth or 2 * (~done).sum() > _MAX_PANELS:
            if not done.all():
                converged = False
            done[:] = True
        if done.any():
            part = kron[done].sum(axis=0)
            total = part if total is None else total + part
            err_total += float(np.minimum(err[done], np.finfo(float).max).sum())
        rest = panels[~done]
        if rest.size:
            m = 0.5 * (rest[:, 0] + rest[:, 1])
            panels = np.concatenate(
                [np.column_stack([rest[:, 0], m]), np.column_stack([m, rest[:, 1]])]
            )
            panels = panels[np.argsort(panels[:, 0], kind="stable")]
        else:
            panels = rest
        depth += 1
    return total, err_total, converged


def adaptive_integrate(
    f: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    tol: float = 1e-12,
    hint: SingularityHint | None = None,
    max_depth: int = 60,
) -> QuadResult:
    """Integrate ``f`` over ``[a, b]`` to absolute tolerance ``tol``.

    ``f`` is called with a 1-D array of abscissae and must return an array
    whose leading axis runs over those abscissae; trailing axes are
    integrated component-wise.

    With an ``endpoint_power`` hint the substitution ``s = c -+ u**p``,
    ``p = 1 / (1 - alpha)``, is applied first, where ``c`` is the singular
    point.  The Jacobian ``p u**(p-1)`` cancels the algebraic singularity
    so the transformed integrand is smooth.

    Returns
    -------
    QuadResult
        ``(value, error, converged)``; a :class:`QuadratureWarning` is issued
        when the depth limit was hit.
    """
    a, b = float(a), float(b)
    if b < a:
        raise ValueError("require a <= b")
    hint = hint or SMOOTH
    if b == a:
        probe = np.asarray(f(np.array([a])), dtype=float)
        return QuadResult(np.zeros(probe.shape[1:]), 0.0, True)

    if not hint.singular:
        res = _gk_adaptive(f, a, b, tol, max_depth)
    else:
        c = b if hint.at is None else float(hint.at)
        p = 1.0 / (1.0 - hint.alpha)
        if c >= b:
            lo, hi, sign = (c - b) ** (1 / p), (c - a) ** (1 / p), -1.0
        elif c <= a:
            lo, hi, sign = (a - c) ** (1 / p), (b - c) ** (1 / p), 1.0
        else:
            raise ValueError("singular point must not lie inside (a, b)")

        def h(u):
            s = c + sign * u**p
            s = np.clip(s, a, b)
            # exact distance to the singular point for the rounded abscissa
            d = sign * (s - c)
            jac = p * d ** ((p - 1.0) / p)
            with np.errstate(divide="ignore", invalid="ignore"):
                vals = np.asarray(f(s), dtype=float)
                out = vals * jac.reshape((-1,) + (1,) * (vals.ndim - 1))
            return np.where(d.reshape((-1,) + (1,) * (vals.ndim - 1)) > 0, out, 0.0)

        res = _gk_adaptive(h, lo, hi, tol, max_depth)

    value, err, ok = res
    if not ok:
        warnings.warn(
            f"adaptive quadrature on [{a}, {b}] did not reach tol={tol} "
            f"(estimate {err:.3e})",
            QuadratureWarning,
            stacklevel=2,
        )
    return QuadResult(np.asarray(value), err, ok)


# ---------------------------------------------------------------------------
# Lagrange interpolation on rule nodes
# ---------------------------------------------------------------------------


def lagrange_basis(nodes, x) -> np.ndarray:
    """Values ``phi_i(x_k)`` of the Lagrange basis on ``nodes``, shape ``(len(x), len(nodes))``."""
    nodes = np.asarray(nodes, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = len(nodes)
    out = np.ones((len(x), n))
    for i in range(n):
        for j in range(n):
            if j != i:
                out[:, i] *= (x - nodes[j]) / (nodes[i] - nodes[j])
    return out


def lagrange_derivative_matrix(nodes) -> np.ndarray:
    """``D[j, i] = phi_i'(nodes[j])`` for the Lagrange basis on ``nodes``."""
    nodes = np.asarray(nodes, dtype=float)
    n = len(nodes)
    bary = np.array(
        [1.0 / np.prod([nodes[i] - nodes[j] for j in range(n) if j != i]) for i in range(n)]
    )
    D = np.zeros((n, n))
    for j in range(n):
        for i in range(n):
            if i != j:
                D[j, i] = bary[i] / bary[j] / (nodes[j] - nodes[i])
        D[j, j] = -D[j].sum()
    return D
