"""Batch front-end: convergence tables, kernel-norm report and plot data.

Example::

    dgmemory --example ex1 --k 2 --q 1 --levels 8,16,32 --out-dir out/ex1

Settings can also come from a flat ``key = value`` file (``--config``);
command-line flags override it.  The run manifest written to the output
directory uses the same format, so ``dgmemory --config out/ex1/manifest.txt``
reproduces a run.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import logging
import platform
import sys
import time
import traceback
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import ConvergenceReport, run_convergence
from .kernel import kernel_norm_report, norm_continuous, norm_discrete, rho_threshold
from .problems import EXAMPLES, registry
from .timemesh import TimeMesh

log = logging.getLogger("dgmemory")

CSV_HEADER = ["k", "q", "N", "M", "E_sup", "rate", "L2rho", "rate"]


@dataclass
class RunConfig:
    example: str = "ex1"
    k: int = 1
    q: int | None = None
    levels: tuple = (8, 16, 32, 64)
    rho: float = 1.0
    T: float = 2.0
    kernel: str | None = None
    source_mode: str | None = None
    ref_mode: str = "auto"
    quad_tol: float = 1e-12
    source_tol: float = 1e-12
    history_quad: str = "fixed"
    reformulated: bool = False
    refinement: int = 3
    rho_scan: tuple = (1, 2, 3, 4, 5, 6, 7, 8)
    gamma: float | None = None
    plot_grid: int = 64
    figures: bool = True
    norms: bool = True
    out_dir: str = "dgmemory-out"

    def __post_init__(self):
        if self.q is None:
            self.q = self.k - 1
        if self.example not in EXAMPLES:
            raise ValueError(f"unknown example {self.example!r}")
        if self.k < 1 or self.q < 0:
            raise ValueError("need k >= 1 and q >= 0")
        if self.T <= 0 or self.rho < 0:
            raise ValueError("need T > 0 and rho >= 0")
        lv = list(self.levels)
        if not lv or any(b != 2 * a for a, b in zip(lv[:-1], lv[1:])):
            raise ValueError("levels must be a non-empty doubling sequence")
        if self.ref_mode not in ("auto", "exact", "reference"):
            raise ValueError(f"unknown reference mode {self.ref_mode!r}")
        if self.history_quad not in ("fixed", "adaptive"):
            raise ValueError(f"unknown history quadrature {self.history_quad!r}")

    @property
    def mode(self) -> str:
        if self.ref_mode != "auto":
            return self.ref_mode
        return "reference" if self.example == "ex3" else "exact"


def _parse_list(text, conv):
    if isinstance(text, (list, tuple)):
        return tuple(conv(v) for v in text)
    return tuple(conv(v) for v in str(text).replace(" ", "").split(",") if v)


def _parse_bool(text):
    if isinstance(text, bool):
        return text
    val = str(text).strip().lower()
    if val in ("1", "true", "yes", "on"):
        return True
    if val in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional(conv):
    def inner(v):
        return None if v in (None, "", "None", "none") else conv(v)
    return inner


_CONVERTERS = {
    "example": str,
    "k": int,
    "q": _optional(int),
    "levels": lambda v: _parse_list(v, int),
    "rho": float,
    "T": float,
    "kernel": _optional(str),
    "source_mode": _optional(str),
    "ref_mode": str,
    "quad_tol": float,
    "source_tol": float,
    "history_quad": str,
    "reformulated": _parse_bool,
    "refinement": int,
    "rho_scan": lambda v: _parse_list(v, float),
    "gamma": _optional(float),
    "plot_grid": int,
    "figures": _parse_bool,
    "norms": _parse_bool,
    "out_dir": str,
}


def read_config(path) -> dict:
    """Read a flat ``key = value`` file; ``info.*`` keys are ignored."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    text = Path(path).read_text()
    parser.read_string("[run]\n" + text)
    out = {}
    for key, value in parser["run"].items():
        if key.startswith("info."):
            continue
        if key not in _CONVERTERS:
            raise ValueError(f"unknown config key {key!r} in {path}")
        out[key] = _CONVERTERS[key](value)
    return out


def _fmt_val(v):
    if isinstance(v, (list, tuple)):
        return ",".join(_fmt_val(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def fmt_err(x: float) -> str:
    return f"{x:.3e}"


def fmt_rate(x: float) -> str:
    return "" if not np.isfinite(x) else f"{x:.2f}"


def table_rows(report: ConvergenceReport):
    for r in report.rows:
        yield [str(report.k), str(report.q), str(r.N), str(r.M), fmt_err(r.e_sup),
               fmt_rate(r.rate_sup), fmt_err(r.e_l2rho), fmt_rate(r.rate_l2rho)]


def write_csv(report: ConvergenceReport, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        writer.writerows(table_rows(report))


def markdown_table(report: ConvergenceReport) -> str:
    lines = ["| (k,q) | N | M | E_sup | rate | L2rho | rate |",
             "|---|---|---|---|---|---|---|"]
    for row in table_rows(report):
        lines.append(f"| ({row[0]},{row[1]}) | " + " | ".join(row[2:]) + " |")
    return "\n".join(lines)


def kernel_section(cfg: RunConfig, problem) -> tuple[dict, str]:
    K = problem.kernel
    mesh = TimeMesh.uniform(cfg.T, cfg.levels[-1], cfg.q, cfg.rho)
    gamma = cfg.gamma if cfg.gamma is not None else problem.gamma
    rep = kernel_norm_report(K, mesh, gamma)
    thr = rho_threshold(K, gamma, mesh, cfg.rho_scan)
    scan = [(r, norm_continuous(K, r, cfg.T, extra_points=mesh.points),
             norm_discrete(K, mesh, rho=r)) for r in cfg.rho_scan]
    info = {
        "kernel": K.name,
        "rho": rep.rho,
        "gamma": gamma,
        "continuous_norm": rep.continuous_norm,
        "discrete_norm": rep.discrete_norm,
        "satisfied": rep.satisfied,
        "rho_threshold": thr,
        "mesh_M": mesh.M,
        "mesh_q": mesh.q,
    }
    lines = [
        f"## Kernel norms ({K.name}, gamma={gamma}, T={cfg.T}, M={mesh.M}, q={mesh.q})",
        "",
        "| rho | continuous | discrete | <= gamma/2 |",
        "|---|---|---|---|",
    ]
    for r, c, d in scan:
        lines.append(f"| {r:g} | {fmt_err(c)} | {fmt_err(d)} | {'yes' if d <= gamma / 2 else 'no'} |")
    lines.append("")
    lines.append(f"rho threshold over scan: {'none' if thr is None else f'{thr:g}'}")
    return info, "\n".join(lines), scan


def plot_grid(solution, T: float, npts: int):
    t = np.linspace(0.0, T, npts)
    x = np.linspace(0.0, 1.0, npts)
    dofs = solution.dofs_at(t)
    E = solution.system.eval_matrices(x)
    vals = np.stack([np.stack([Ea @ solution.system.block(d, a) for d in dofs])
                     for a, Ea in enumerate(E)])
    return t, x, vals


def write_plot_grid(t, x, vals, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "x"] + [f"U{a}" if vals.shape[0] != 2 else "uv"[a]
                                      for a in range(vals.shape[0])])
        for i, ti in enumerate(t):
            for j, xj in enumerate(x):
                writer.writerow([repr(float(ti)), repr(float(xj))]
                                + [repr(float(vals[a, i, j])) for a in range(vals.shape[0])])


def write_manifest(cfg: RunConfig, info: dict, path: Path) -> None:
    lines = ["# dgmemory run manifest; rerun with: dgmemory --config <this file>"]
    for f in fields(cfg):
        if f.name == "out_dir":
            continue
        lines.append(f"{f.name} = {_fmt_val(getattr(cfg, f.name))}")
    for key, value in info.items():
        lines.append(f"info.{key} = {_fmt_val(value)}")
    path.write_text("\n".join(lines) + "\n")


def run(cfg: RunConfig) -> int:
    """Execute a configured run; returns the process exit status."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    info: dict = {"version": __version__, "python": platform.python_version(),
                  "numpy": np.__version__, "status": "running"}
    stem = f"{cfg.example}_k{cfg.k}_q{cfg.q}"
    write_manifest(cfg, info, out / "manifest.txt")
    t_start = time.perf_counter()
    try:
        problem = registry(cfg.example, rho=cfg.rho, T=cfg.T, kernel=cfg.kernel,
                           source_mode=cfg.source_mode)
        md = [f"# {cfg.example}: (k, q) = ({cfg.k}, {cfg.q}), rho = {cfg.rho}, T = {cfg.T}", ""]
        if cfg.norms and not problem.kernel.is_zero:
            t0 = time.perf_counter()
            kinfo, ktext, scan = kernel_section(cfg, problem)
            info.update({f"kernel_norm.{k}": v for k, v in kinfo.items()})
            info["seconds.kernel_norms"] = time.perf_counter() - t0
            with open(out / "kernel_norms.csv", "w", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["rho", "continuous_norm", "discrete_norm"])
                for r, c, d in scan:
                    writer.writerow([repr(float(r)), repr(c), repr(d)])
            md += [ktext, ""]
        solver_kw = dict(history_quad=cfg.history_quad, quad_tol=cfg.quad_tol,
                         source_tol=cfg.source_tol, reformulated=cfg.reformulated)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            report = run_convergence(problem, (cfg.k, cfg.q), cfg.levels, cfg.mode,
                                     r=cfg.refinement, solver_kw=solver_kw, keep_solutions=True)
        write_csv(report, out / f"{stem}.csv")
        md += ["## Convergence", "", markdown_table(report), ""]
        if report.warnings:
            md += ["Notes:", ""] + [f"- {w}" for w in report.warnings] + [""]
        (out / f"{stem}.md").write_text("\n".join(md))
        for N, dt in zip(cfg.levels, report.timings):
            info[f"seconds.level_{N}"] = dt
        if report.reference:
            info.update({f"reference.{k}": v for k, v in report.reference.items()})
        for i, w in enumerate(report.warnings):
            info[f"warning.{i}"] = w.replace("\n", " ")
        for row in report.rows:
            info[f"L2rho.N{row.N}"] = row.e_l2rho
            info[f"E_sup.N{row.N}"] = row.e_sup

        t, x, vals = plot_grid(report.solutions[-1], cfg.T, cfg.plot_grid)
        write_plot_grid(t, x, vals, out / f"{stem}_grid.csv")
        if cfg.figures:
            from .plotting import convergence_figure, solution_figure

            convergence_figure(report, out / f"{stem}_convergence.png",
                               f"{cfg.example}: (k, q) = ({cfg.k}, {cfg.q})")
            solution_figure(t, x, vals, out / f"{stem}_solution.png")
        print(markdown_table(report))
        info["status"] = "ok"
        status = 0
    except Exception as exc:  # keep partial artifacts, mark the failure
        info["status"] = "failed"
        info["error"] = f"{type(exc).__name__}: {exc}".replace("\n", " ")
        (out / "FAILED").write_text(traceback.format_exc())
        log.error("run failed: %s", exc)
        status = 1
    info["seconds.total"] = time.perf_counter() - t_start
    write_manifest(cfg, info, out / "manifest.txt")
    return status


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="dgmemory",
        description="Convergence study of DG-in-time / FEM-in-space for equations with memory.",
    )
    p.add_argument("--config", help="key = value file (a previous manifest works)")
    p.add_argument("--example", choices=EXAMPLES)
    p.add_argument("--k", type=int, help="spatial degree (default 1)")
    p.add_argument("--q", type=int, help="temporal degree (default k-1)")
    p.add_argument("--levels", help="comma-separated doubling N=M values, e.g. 8,16,32")
    p.add_argument("--rho", type=float)
    p.add_argument("--T", type=float)
    p.add_argument("--kernel", help="kernel override, e.g. example1, example2, scalar_const(0.1)")
    p.add_argument("--source-mode", choices=("manufactured", "direct"))
    p.add_argument("--ref-mode", choices=("auto", "exact", "reference"))
    p.add_argument("--quad-tol", type=float)
    p.add_argument("--source-tol", type=float)
    p.add_argument("--history-quad", choices=("fixed", "adaptive"))
    p.add_argument("--reformulated", action="store_true", default=None,
                   help="solve the unweighted reformulation (cross-check)")
    p.add_argument("--refinement", type=int, help="extra degrees of the error quadrature")
    p.add_argument("--rho-scan", help="comma-separated rho candidates for the threshold scan")
    p.add_argument("--gamma", type=float)
    p.add_argument("--plot-grid", type=int)
    p.add_argument("--no-figures", dest="figures", action="store_false", default=None)
    p.add_argument("--no-norms", dest="norms", action="store_false", default=None)
    p.add_argument("--out-dir")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(argv=None) -> tuple[RunConfig, argparse.Namespace]:
    args = build_parser().parse_args(argv)
    values = read_config(args.config) if args.config else {}
    for key, conv in _CONVERTERS.items():
        v = getattr(args, key, None)
        if v is not None:
            values[key] = conv(v)
    return RunConfig(**values), args


def main(argv=None) -> int:
    try:
        cfg, args = config_from_args(argv)
    except ValueError as exc:
        print(f"dgmemory: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    log.info("config: %s", asdict(cfg))
    return run(cfg)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
