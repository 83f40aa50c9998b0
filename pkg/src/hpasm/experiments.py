"""Experiment drivers: condition sweeps, residual ensembles, solutions with stress output.

Each (p, lambda) cell is independent; cells may run on a thread pool but rows
are always reported in (p, lambda) order.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import __version__
from .asm_precond import MODES, build_preconditioner
from .assembly import FESpace, assemble_global, assemble_load
from .diagnostics import (EnsembleResult, residual_ensemble, von_mises_field, write_csv,
                          write_stress_csv)
from .extension import build_extension, static_condense
from .krylov import DENSE_LIMIT, dense_condition_oracle, pcg
from .mesh import Mesh, generate_problem_mesh, read_mesh

log = logging.getLogger(__name__)

PROBLEMS = ("cook", "moffatt", "square")
SPACES = {"condensed": "elastic", "scip": "stokes", "inexact": "inexact"}
SWEEP_COLUMNS = ["problem", "p", "lambda", "n_dofs", "kappa_A", "kappa_ABB", "kappa_precond",
                 "source", "kappa_lanczos", "iterations", "error"]


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    problem: str = "cook"
    p_list: list = field(default_factory=lambda: [4])
    lambda_list: list = field(default_factory=lambda: [10.0])
    mu: float = 1.0
    boundary_space: str = "condensed"
    mode: str = "boundary"
    tol: float = 1e-12
    max_iter: int = 500
    ensemble_count: int = 100
    seed: int = 0
    out: str | None = None
    dense_oracle: bool = False
    workers: int = 1
    mesh: str | None = None
    level: int = 0

    def validate(self) -> "ExperimentConfig":
        if self.problem not in PROBLEMS:
            raise ConfigError(f"problem must be one of {PROBLEMS}")
        if self.boundary_space not in SPACES:
            raise ConfigError(f"boundary space must be one of {tuple(SPACES)}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if not self.p_list or any(int(p) < 4 for p in self.p_list):
            raise ConfigError("the preconditioner needs p >= 4")
        if not self.lambda_list or any(lam < 0 for lam in self.lambda_list):
            raise ConfigError("lambda must be >= 0")
        if self.mu <= 0:
            raise ConfigError("mu must be > 0")
        if self.tol <= 0 or self.max_iter < 1:
            raise ConfigError("tol must be > 0 and max_iter >= 1")
        if self.ensemble_count < 1:
            raise ConfigError("ensemble count must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.level < 0:
            raise ConfigError("level must be >= 0")
        self.p_list = [int(p) for p in self.p_list]
        self.lambda_list = [float(v) for v in self.lambda_list]
        return self

    @property
    def flavor(self) -> str:
        return SPACES[self.boundary_space]

    def header(self) -> dict:
        h = {"artifact version": __version__}
        h.update({k: v for k, v in asdict(self).items()})
        return h


def load_mesh(config: ExperimentConfig) -> Mesh:
    if config.mesh:
        return read_mesh(config.mesh)
    return generate_problem_mesh(config.problem, config.level)


# ---------------------------------------------------------------------------
# condition sweep

def extreme_condition(A, dense: bool) -> float:
    """kappa of an SPD matrix: dense eigensolve, or ARPACK (shift-invert for the bottom)."""
    n = A.shape[0]
    if dense or n < 50:
        w = np.linalg.eigvalsh(A.toarray() if sp.issparse(A) else A)
        return float(w[-1] / w[0])
    A = sp.csc_matrix(A)
    lmax = spla.eigsh(A, k=1, which="LA", return_eigenvectors=False, tol=1e-8)[0]
    lmin = spla.eigsh(A, k=1, sigma=0.0, which="LM", return_eigenvectors=False, tol=1e-8)[0]
    return float(lmax / lmin)


def _cell_operators(config: ExperimentConfig, space: FESpace, lam: float):
    A = assemble_global(space, config.mu, lam)
    ext = build_extension(space, config.mu, lam, config.flavor)
    cond = static_condense(A, ext)
    P, op = build_preconditioner(A, space, ext, config.mode, A_BB=cond.A_BB)
    return A, cond.A_BB, P, op


def condition_cell(config: ExperimentConfig, space: FESpace, lam: float) -> dict:
    row = {"problem": config.problem, "p": space.p, "lambda": lam, "n_dofs": None,
           "kappa_A": None, "kappa_ABB": None, "kappa_precond": None, "source": None,
           "kappa_lanczos": None, "iterations": None, "error": ""}
    try:
        A, A_BB, P, op = _cell_operators(config, space, lam)
        n = op.shape[0]
        row["n_dofs"] = n
        dense = config.dense_oracle and max(A.shape[0], n) <= DENSE_LIMIT
        if config.dense_oracle and not dense:
            log.info("dense oracle disabled for p=%d lambda=%g: %d unknowns exceed %d",
                     space.p, lam, max(A.shape[0], n), DENSE_LIMIT)
        row["kappa_A"] = extreme_condition(A, dense)
        row["kappa_ABB"] = extreme_condition(A_BB, dense) if A_BB.shape[0] else float("nan")
        b = np.random.default_rng(config.seed).uniform(-1.0, 1.0, n)
        res = pcg(op, b, P.apply, tol=config.tol, max_iter=config.max_iter)
        row["iterations"] = res.iterations
        est = res.kappa_estimate
        row["kappa_lanczos"] = est[2] if est else float("nan")
        if dense:
            row["kappa_precond"], row["source"] = dense_condition_oracle(op, P.apply), "dense"
        else:
            row["kappa_precond"], row["source"] = row["kappa_lanczos"], "lanczos"
        if not res.converged:
            row["error"] = f"pcg did not converge in {config.max_iter} iterations"
    except Exception as exc:  # reported per row; the sweep continues
        log.error("cell p=%d lambda=%g failed: %s", space.p, lam, exc)
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def _map_cells(config: ExperimentConfig, fn):
    mesh = load_mesh(config)
    spaces = {p: FESpace(mesh, p) for p in config.p_list}
    cells = [(p, lam) for p in config.p_list for lam in config.lambda_list]
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            return list(pool.map(lambda c: fn(spaces[c[0]], c[1]), cells))
    return [fn(spaces[p], lam) for p, lam in cells]


def run_condition_sweep(config: ExperimentConfig) -> list[dict]:
    config.validate()
    return _map_cells(config, lambda space, lam: condition_cell(config, space, lam))


def write_sweep_csv(path, rows, config: ExperimentConfig) -> None:
    write_csv(path, SWEEP_COLUMNS, ([r[c] if r[c] is not None else "" for c in SWEEP_COLUMNS]
                                    for r in rows), config.header())


# ---------------------------------------------------------------------------
# ensembles

@dataclass
class EnsembleCell:
    p: int
    lam: float
    ensemble: EnsembleResult | None
    error: str = ""


def run_ensemble(config: ExperimentConfig) -> list[EnsembleCell]:
    config.validate()

    def cell(space, lam):
        try:
            _, _, P, op = _cell_operators(config, space, lam)
            ens = residual_ensemble(op, P.apply, config.ensemble_count, config.seed,
                                    config.tol, config.max_iter)
            err = "" if ens.summary["all_converged"] else "not all runs converged"
            return EnsembleCell(space.p, lam, ens, err)
        except Exception as exc:
            log.error("ensemble p=%d lambda=%g failed: %s", space.p, lam, exc)
            return EnsembleCell(space.p, lam, None, f"{type(exc).__name__}: {exc}")

    return _map_cells(config, cell)


def write_ensemble_cells_csv(path, cells, config: ExperimentConfig) -> None:
    def rows():
        for c in cells:
            if c.ensemble is None:
                continue
            for run, r in enumerate(c.ensemble.results):
                for it, rel in enumerate(r.residual_history):
                    yield c.p, c.lam, run, it, float(rel)
    write_csv(path, ["p", "lambda", "run", "iter", "relres"], rows(), config.header())


# ---------------------------------------------------------------------------
# solution + stress

@dataclass
class SolutionResult:
    space: FESpace
    u_full: np.ndarray
    iterations: int
    converged: bool
    samples: list


def run_solution(config: ExperimentConfig, lattice: int = 10) -> SolutionResult:
    """Solve the problem's own data by static condensation plus preconditioned CG.

    The iteration runs on the exactly condensed boundary system; the chosen
    boundary space only affects sweeps and ensembles.
    """
    config.validate()
    if len(config.p_list) != 1 or len(config.lambda_list) != 1:
        raise ConfigError("solve needs exactly one p and one lambda")
    p, lam = config.p_list[0], config.lambda_list[0]
    space = FESpace(load_mesh(config), p)
    system = assemble_load(space, config.mu, lam, config.problem)
    ext = build_extension(space, config.mu, lam, "elastic")
    cond = static_condense(system.A, ext)
    P, op = build_preconditioner(system.A, space, ext, "boundary", A_BB=cond.A_BB)
    rhs_B = cond.boundary_rhs(system.rhs)
    res = pcg(op, rhs_B, P.apply, tol=config.tol, max_iter=config.max_iter)
    u = system.full_solution(cond.recover(res.x, system.rhs))
    samples = von_mises_field(space, u, config.mu, lam, lattice)
    return SolutionResult(space, u, res.iterations, res.converged, samples)


def write_solution_csv(path, result: SolutionResult, config: ExperimentConfig) -> tuple[Path, Path]:
    """Stress samples to ``path``; vertex displacements next to it."""
    path = Path(path)
    disp = path.with_name(path.stem + "_displacement" + (path.suffix or ".csv"))
    header = config.header()
    write_stress_csv(path, result.samples, header)
    mesh, ns = result.space.mesh, result.space.dofmap.n_scalar
    u = result.u_full
    rows = ((x, y, u[a], u[ns + a]) for a, (x, y) in enumerate(mesh.vertices))
    write_csv(disp, ["x", "y", "ux", "uy"], rows, header)
    return path, disp
