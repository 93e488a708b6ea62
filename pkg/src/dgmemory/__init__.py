"""DG-in-time / finite-element-in-space solver for evolutionary equations with memory.

Solves ``(d/dt M0 + M1 + A + T_K) U = F`` on ``(0, T] x (0, 1)`` where
``T_K U(t) = int_0^t K(t, s) U(s) ds`` with a smooth or weakly singular
kernel, using discontinuous Galerkin time stepping with an exponentially
weighted Gauss-Radau rule and continuous Lagrange elements in space.
"""

__version__ = "0.1.0"

from .analysis import ErrorPair, ConvergenceReport, eoc, error_norms, quadrature_norm, run_convergence
from .dg_solver import DiscreteSolution, Problem, eval_solution, solve
from .kernel import KernelEntry, KernelSpec, named_kernel, norm_continuous, norm_discrete
from .problems import registry
from .space_fem import SpaceMesh1D, assemble_block_system
from .timemesh import TimeMesh

__all__ = [
    "ConvergenceReport",
    "DiscreteSolution",
    "ErrorPair",
    "KernelEntry",
    "KernelSpec",
    "Problem",
    "SpaceMesh1D",
    "TimeMesh",
    "assemble_block_system",
    "eoc",
    "error_norms",
    "eval_solution",
    "named_kernel",
    "norm_continuous",
    "norm_discrete",
    "quadrature_norm",
    "registry",
    "run_convergence",
    "solve",
]
