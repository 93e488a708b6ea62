"""Registry of the benchmark problems on ``[0, 2] x (0, 1)``.

``ex1``
    Smooth bounded kernel ``((t-s, s), (t, (t-s)^2))`` with the manufactured
    solution ``u = (t + e^-t) sin(pi x^2)``, ``v = cos(t) e^x``.
``ex2``
    Same data with the weakly singular kernel
    ``diag((t-s)^(-3/4), (t-s)^(-1/2))``.
``ex3``
    The singular kernel with ``F = (1, 1)`` and ``x0 = (sin(2 pi x^2), 0)``;
    no closed-form solution, so errors are measured against a reference.
``zero``
    ``F = 0``, ``x0 = 0``; the discrete solution vanishes identically.

All share ``n = 2``, ``M0 = M1 = I``, ``gamma = 1``, ``T = 2`` and
``rho = 1``, with the first-order wave operator ``((0, d/dx), (d/dx, 0))``
and homogeneous Dirichlet conditions on the first component.
"""

from __future__ import annotations

import numpy as np

from .dg_solver import Problem
from .kernel import KernelSpec, example1_kernel, example2_kernel, named_kernel, zero_kernel

__all__ = ["EXAMPLES", "registry", "manufactured_u_v"]

EXAMPLES = ("ex1", "ex2", "ex3", "zero")


def _exact(t, x):
    x = np.asarray(x, dtype=float)
    return np.stack([(t + np.exp(-t)) * np.sin(np.pi * x**2), np.cos(t) * np.exp(x)])


def _exact_dt(t, x):
    x = np.asarray(x, dtype=float)
    return np.stack([(1.0 - np.exp(-t)) * np.sin(np.pi * x**2), -np.sin(t) * np.exp(x)])


def _exact_dx(t, x):
    x = np.asarray(x, dtype=float)
    return np.stack([
        (t + np.exp(-t)) * 2.0 * np.pi * x * np.cos(np.pi * x**2),
        np.cos(t) * np.exp(x),
    ])


#: The manufactured solution of ``ex1``/``ex2`` and its partial derivatives.
manufactured_u_v = (_exact, _exact_dt, _exact_dx)


def _ex3_x0(x):
    x = np.asarray(x, dtype=float)
    return np.stack([np.sin(2.0 * np.pi * x**2), np.zeros_like(x)])


def _ex3_F(t, x):
    return np.ones((2, len(np.atleast_1d(x))))


def _zero2(t, x):
    return np.zeros((2, len(np.atleast_1d(x))))


def registry(name: str, *, rho: float = 1.0, T: float = 2.0,
             kernel: KernelSpec | str | None = None, source_mode: str | None = None) -> Problem:
    """Build a benchmark :class:`~dgmemory.dg_solver.Problem` by id.

    ``kernel`` overrides the example's kernel (a :class:`KernelSpec` or a
    name understood by :func:`~dgmemory.kernel.named_kernel`).
    """
    if isinstance(kernel, str):
        kernel = named_kernel(kernel)
    common = dict(n=2, M0=np.eye(2), M1=np.eye(2), gamma=1.0, operator="grad", T=T, rho=rho)
    if name in ("ex1", "ex2"):
        K = kernel or (example1_kernel() if name == "ex1" else example2_kernel())
        mode = source_mode or "manufactured"
        F = None
        if mode == "direct":
            raise ValueError(f"{name} has no closed-form source; use manufactured mode")
        return Problem(kernel=K, x0=lambda x: _exact(0.0, x), F=F, exact=_exact,
                       exact_dt=_exact_dt, exact_dx=_exact_dx, source_mode=mode,
                       name=name, **common)
    if name == "ex3":
        if source_mode not in (None, "direct"):
            raise ValueError("ex3 has no exact solution; only direct source mode applies")
        return Problem(kernel=kernel or example2_kernel(), F=_ex3_F, x0=_ex3_x0,
                       source_mode="direct", name=name, **common)
    if name == "zero":
        return Problem(kernel=kernel or zero_kernel(2), F=_zero2, x0=lambda x: _zero2(0.0, x),
                       exact=_zero2, source_mode="direct", name=name, **common)
    raise ValueError(f"unknown example {name!r}; choose from {', '.join(EXAMPLES)}")
