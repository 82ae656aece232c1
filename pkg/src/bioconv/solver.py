"""Newton (or Picard) iteration with sparse direct linear solves.

The stopping rule follows the increment between successive coefficient
vectors over all unknowns including the two multipliers: both the
relative and the absolute Euclidean increment must drop below the
tolerance. The update is undamped; a halving backtracking line search
kicks in only when the residual norm would otherwise grow.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .forms import SystemState, assemble_jacobian, assemble_residual


class SolverError(Exception):
    pass


@dataclass
class SolverConfig:
    tol: float = 1e-7
    max_iter: int = 25
    mode: str = "newton"          # "newton" or "picard"
    linear_solver: str = "direct-lu"
    line_search: bool = True
    max_halvings: int = 8

    def __post_init__(self):
        if self.tol <= 0:
            raise SolverError("tol must be positive")
        if self.max_iter < 1:
            raise SolverError("max_iter must be at least 1")
        if self.mode not in ("newton", "picard"):
            raise SolverError(f"unknown mode {self.mode!r}")
        if self.linear_solver != "direct-lu":
            raise SolverError(f"unknown linear solver {self.linear_solver!r}")


@dataclass
class SolveReport:
    iterations: int = 0
    increment_history: list = field(default_factory=list)
    residual_history: list = field(default_factory=list)
    converged: bool = False


def linear_solve(system, rhs):
    """Direct LU solve of a SparseSystem's Jacobian (or a sparse matrix)."""
    mat = getattr(system, "jacobian", system)
    return _factorize(mat).solve(np.asarray(rhs, dtype=float))


def _factorize(mat):
    mat = sp.csc_matrix(mat)
    try:
        return spla.splu(mat)
    except RuntimeError as exc:
        # SuperLU reports "Factor is exactly singular" with the pivot index
        raise SolverError(f"direct factorization failed: {exc}") from exc


def solve(initial, data, spaces, config=None):
    """Drive the nonlinear iteration to the increment-based stopping rule.

    Returns (converged SystemState, SolveReport). Non-convergence within
    max_iter is reported, not raised; a singular Jacobian raises
    SolverError naming the iteration.
    """
    config = config or SolverConfig()
    x = initial.pack(spaces)
    report = SolveReport()

    for it in range(1, config.max_iter + 1):
        state = SystemState.unpack(x, spaces)
        system = assemble_jacobian(state, data, spaces, mode=config.mode)
        res_norm = float(np.abs(system.residual).max())
        report.residual_history.append(res_norm)
        try:
            lu = _factorize(system.jacobian)
        except SolverError as exc:
            raise SolverError(f"iteration {it}: {exc}") from exc
        delta = lu.solve(-system.residual)
        if not np.all(np.isfinite(delta)):
            raise SolverError(f"iteration {it}: linear solve returned non-finite values")

        alpha = 1.0
        x_new = x + delta
        if config.line_search:
            new_norm = _residual_norm(x_new, data, spaces)
            halvings = 0
            while (new_norm > res_norm and res_norm > 0
                   and halvings < config.max_halvings):
                alpha *= 0.5
                halvings += 1
                x_new = x + alpha * delta
                new_norm = _residual_norm(x_new, data, spaces)

        inc_abs = float(np.linalg.norm(alpha * delta))
        nrm = float(np.linalg.norm(x_new))
        inc_rel = inc_abs / nrm if nrm > 0 else 0.0
        report.increment_history.append(inc_rel)
        report.iterations = it
        x = x_new
        if inc_rel < config.tol and inc_abs < config.tol:
            report.converged = True
            break

    final = SystemState.unpack(x, spaces)
    return final, report


def _residual_norm(x, data, spaces):
    state = SystemState.unpack(x, spaces)
    return float(np.abs(assemble_residual(state, data, spaces)).max())
