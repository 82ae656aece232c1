"""Solve-estimate-mark-refine driver on the macro/barycentric hierarchy.

Indicators live on the barycentric mesh; marking and refinement act on the
macro mesh (each macro cell inherits the sum of its three children's
indicator values). Refinement is longest-edge bisection with conformity
closure; the next level's barycentric mesh is regenerated from the refined
macro mesh. Solves are warm-started by transferring the previous solution
through cell-local projection at quadrature points.
"""

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import estimator, fem, postproc
from .forms import SystemState
from .mesh import barycentric_refine, refine_marked
from .solver import SolverConfig, solve


class AdaptError(Exception):
    pass


@dataclass
class AmrConfig:
    dorfler_theta: float = 0.5
    max_levels: int = 8
    dof_budget: int = 2_000_000
    tol_theta: float = 0.0
    marking: str = "dorfler"     # or "max"
    max_fraction: float = 0.5    # threshold for the "max" strategy
    warm_start: bool = True

    def __post_init__(self):
        if not 0.0 < self.dorfler_theta <= 1.0:
            raise AdaptError("dorfler_theta must lie in (0, 1]")
        if self.max_levels < 1:
            raise AdaptError("max_levels must be at least 1")


@dataclass
class AmrTrace:
    records: list = field(default_factory=list)
    marked_counts: list = field(default_factory=list)
    wall_times: list = field(default_factory=list)
    aborted: bool = False


def aggregate_to_macro(fld, hierarchy):
    """Sum theta_bar^2 + theta_hat^(4/3) of the three children per macro cell."""
    child_of = hierarchy.child_of
    n_macro = hierarchy.macro.num_cells
    if len(child_of) != hierarchy.bary.num_cells or child_of.max() >= n_macro:
        raise AdaptError("hierarchy child map does not match the meshes")
    per_child = fld.theta_bar_sq + fld.theta_hat_pow
    out = np.zeros(n_macro)
    np.add.at(out, child_of, per_child)
    return out


def dorfler_mark(importance, theta):
    """Minimal descending-importance prefix whose sum reaches theta * total.

    Ties broken toward lower cell index; all-zero importance yields an
    empty set with a warning.
    """
    importance = np.asarray(importance, dtype=float)
    if np.any(importance < 0):
        raise AdaptError("importance values must be nonnegative")
    total = importance.sum()
    if total <= 0.0:
        warnings.warn("all-zero importance: nothing to mark")
        return np.array([], dtype=np.int64)
    order = np.argsort(-importance, kind="stable")
    csum = np.cumsum(importance[order])
    k = int(np.searchsorted(csum, theta * total - 1e-14 * total) + 1)
    k = min(k, len(order))
    # drop zero-importance tail that a full-theta request would include
    marked = order[:k]
    marked = marked[importance[marked] > 0]
    return np.sort(marked)


def max_mark(importance, fraction):
    """Cells whose importance reaches fraction * max importance."""
    importance = np.asarray(importance, dtype=float)
    top = importance.max()
    if top <= 0.0:
        warnings.warn("all-zero importance: nothing to mark")
        return np.array([], dtype=np.int64)
    return np.flatnonzero(importance >= fraction * top)


def amr_loop(spec, config=None, degree=1, solver_config=None):
    """Run the adaptive cycle for a registered problem. Returns an AmrTrace;
    solver non-convergence aborts with the partial trace."""
    config = config or AmrConfig()
    solver_config = solver_config or SolverConfig()
    if degree < max(1, spec.min_degree):
        raise AdaptError(f"{spec.name} needs polynomial degree >= {spec.min_degree}")

    trace = AmrTrace()
    macro = spec.macro_mesh(spec.initial_n)
    carry = None  # (old spaces, old state, parent map macro_new -> macro_old)

    for level in range(config.max_levels):
        t0 = time.perf_counter()
        hierarchy = barycentric_refine(macro)
        spaces = fem.build_spaces(hierarchy, degree)
        initial = SystemState.zeros(spaces)
        if config.warm_start and carry is not None:
            try:
                initial = transfer_state(carry[0], carry[1], spaces,
                                         hierarchy, carry[2])
            except Exception:
                initial = SystemState.zeros(spaces)
        state, report = solve(initial, spec.data, spaces, solver_config)
        if not report.converged:
            trace.aborted = True
            break

        fld = estimator.local_indicators(state, spec.data, spaces)
        if spec.exact is not None:
            rec = postproc.compute_errors(state, spec.exact, spec.data, spaces,
                                          report.iterations)
            rec.eff = estimator.effectivity(rec.e_tot(), fld.theta_global)
        else:
            rec = postproc.ErrorRecord(
                N=spaces.n_dofs, h=float(spaces.mesh.cell_diameters.max()),
                iterations=report.iterations)
        rec.theta = fld.theta_global
        rec.set_rates_from(trace.records[-1] if trace.records else None)
        rec.wall_time = time.perf_counter() - t0

        importance = aggregate_to_macro(fld, hierarchy)
        if config.marking == "max":
            marks = max_mark(importance, config.max_fraction)
        else:
            marks = dorfler_mark(importance, config.dorfler_theta)
        rec.marked = int(marks.size)
        trace.records.append(rec)
        trace.marked_counts.append(int(marks.size))
        trace.wall_times.append(rec.wall_time)

        if level + 1 >= config.max_levels:
            break
        if spaces.n_dofs >= config.dof_budget:
            break
        if fld.theta_global < config.tol_theta:
            break
        if marks.size == 0:
            break
        new_macro = refine_marked(macro, marks)
        carry = (spaces, state, new_macro.parent_cells)
        macro = new_macro
    return trace


# ---------------------------------------------------------------------------
# solution transfer between consecutive levels


def _locate_in_candidates(old_spaces, pts, cands):
    """Pick the most feasible candidate cell per point; returns (cells, refs)."""
    P = pts.reshape(-1, 2)
    C = cands.reshape(-1, cands.shape[-1])
    Jinv = old_spaces.Jinv
    x0 = old_spaces.x0
    scores = np.full(len(P), -np.inf)
    cells = np.zeros(len(P), dtype=np.int64)
    refs = np.zeros((len(P), 2))
    for k in range(C.shape[1]):
        c = C[:, k]
        ref = np.einsum("iab,ib->ia", Jinv[c], P - x0[c])
        score = np.minimum(1.0 - ref.sum(axis=1), ref.min(axis=1))
        upd = score > scores
        scores[upd] = score[upd]
        cells[upd] = c[upd]
        refs[upd] = ref[upd]
    if scores.min() < -1e-8:
        raise AdaptError("transfer point escaped its ancestor cell")
    return cells, refs


def _old_candidates(old_spaces, new_hierarchy, parent_macro, new_cells):
    """Old barycentric children of each new cell's old macro ancestor."""
    m_old = parent_macro[new_hierarchy.child_of[new_cells]]
    return 3 * m_old[..., None] + np.arange(3)


class _FieldEvaluators:
    """Evaluate the old discrete solution at arbitrary physical points."""

    def __init__(self, old_spaces, old_state):
        self.sp = old_spaces
        self.state = old_state

    def _dg_scalar(self, coeffs, cells, refs):
        B = self.sp.scalar.eval(refs)
        C = coeffs.reshape(self.sp.mesh.num_cells, -1)
        return np.einsum("ik,ik->i", B, C[cells])

    def dg_scalar(self, cells, refs):
        return self._dg_scalar(self.state.phi, cells, refs)

    def dg_vector(self, coeffs, cells, refs):
        C = coeffs.reshape(self.sp.mesh.num_cells, 2, -1)
        B = self.sp.scalar.eval(refs)
        return np.stack([np.einsum("ik,ik->i", B, C[cells, d]) for d in range(2)],
                        axis=-1)

    def dg_tensor(self, cells, refs):
        C = self.state.t.reshape(self.sp.mesh.num_cells, 3, -1)
        B = self.sp.scalar.eval(refs)
        comps = np.stack([np.einsum("ik,ik->i", B, C[cells, a]) for a in range(3)])
        return np.einsum("ai,ajk->ijk", comps, fem.TRACEFREE_BASIS)

    def rt_vector(self, coeffs, cells, refs):
        psi = self.sp.rt.eval(refs)  # (n, nl, 2)
        J = self.sp.J[cells]
        detJ = self.sp.detJ[cells]
        vals = np.einsum("iab,ilb->ila", J, psi) / detJ[:, None, None]
        dm = self.sp.dofmaps["st"]
        local = coeffs[dm.cell_dofs[cells]] * dm.cell_signs[cells]
        return np.einsum("ila,il->ia", vals, local)

    def rt_tensor(self, cells, refs):
        n = self.sp.n_rt
        rows = [self.rt_vector(self.state.sig[r * n:(r + 1) * n], cells, refs)
                for r in range(2)]
        return np.stack(rows, axis=-2)


def transfer_state(old_spaces, old_state, new_spaces, new_hierarchy,
                   parent_macro):
    """Project the old discrete solution onto the new spaces (initial guess)."""
    ev = _FieldEvaluators(old_spaces, old_state)
    tri = new_spaces.mesh
    M = tri.num_cells
    tab = new_spaces.vol
    nq = tab.ref_points.shape[0]

    cands = np.broadcast_to(
        _old_candidates(old_spaces, new_hierarchy, parent_macro,
                        np.arange(M))[:, None, :], (M, nq, 3))
    cells, refs = _locate_in_candidates(old_spaces, tab.qpoints, cands)

    sv = tab.sv
    rw = tab.ref_weights
    new = SystemState.zeros(new_spaces)

    phi_vals = ev.dg_scalar(cells, refs).reshape(M, nq)
    new.phi = np.einsum("q,qk,mq->mk", rw, sv, phi_vals).ravel()
    u_vals = ev.dg_vector(old_state.u, cells, refs).reshape(M, nq, 2)
    new.u = np.einsum("q,qk,mqc->mck", rw, sv, u_vals).reshape(M, -1).ravel()
    tt_vals = ev.dg_vector(old_state.tt, cells, refs).reshape(M, nq, 2)
    new.tt = np.einsum("q,qk,mqc->mck", rw, sv, tt_vals).reshape(M, -1).ravel()
    t_vals = ev.dg_tensor(cells, refs).reshape(M, nq, 2, 2)
    comps = np.stack([t_vals[..., 0, 0], t_vals[..., 0, 1], t_vals[..., 1, 0]],
                     axis=-1)
    new.t = np.einsum("q,qk,mqa->mak", rw, sv, comps).reshape(M, -1).ravel()

    new.st = _transfer_rt(ev, "st", new_spaces, new_hierarchy, parent_macro,
                          old_spaces)
    n_rt = new_spaces.n_rt
    sig_rows = [_transfer_rt(ev, ("sig", r), new_spaces, new_hierarchy,
                             parent_macro, old_spaces) for r in range(2)]
    new.sig = np.concatenate(sig_rows)
    new.lam_trsigma = old_state.lam_trsigma
    new.lam_phimean = old_state.lam_phimean
    return new


def _transfer_rt(ev, which, new_spaces, new_hierarchy, parent_macro,
                 old_spaces):
    from .fem import edge_rule, facet_param_points, shifted_legendre, _mono_vals

    tri = new_spaces.mesh
    ell = new_spaces.degree
    nf = ell + 1
    E = tri.num_facets
    M = tri.num_cells

    def old_field(cells, refs):
        if which == "st":
            return ev.rt_vector(ev.state.st, cells, refs)
        r = which[1]
        n = old_spaces.n_rt
        return ev.rt_vector(ev.state.sig[r * n:(r + 1) * n], cells, refs)

    s1d, w1d = edge_rule(new_spaces.edge_degree)
    pts, _ = facet_param_points(tri, np.arange(E), s1d)
    owners = tri.facet_cells[:, 0]
    cands = np.broadcast_to(
        _old_candidates(old_spaces, new_hierarchy, parent_macro, owners)
        [:, None, :], (E, len(s1d), 3))
    cells, refs = _locate_in_candidates(old_spaces, pts, cands)
    vn = np.einsum("fqc,fc->fq",
                   old_field(cells, refs).reshape(E, len(s1d), 2),
                   tri.facet_normals)
    coeffs = np.zeros(new_spaces.dofmaps["st"].n_dofs)
    L = tri.facet_diameters
    for m in range(nf):
        P = shifted_legendre(m, s1d)
        coeffs[np.arange(E) * nf + m] = L * np.einsum("q,q,fq->f", w1d, P, vn)

    basis = new_spaces.rt
    if basis.n_interior:
        tab = new_spaces.vol
        nq = tab.ref_points.shape[0]
        cands = np.broadcast_to(
            _old_candidates(old_spaces, new_hierarchy, parent_macro,
                            np.arange(M))[:, None, :], (M, nq, 3))
        cells, refs = _locate_in_candidates(old_spaces, tab.qpoints, cands)
        vals = old_field(cells, refs).reshape(M, nq, 2)
        vhat = new_spaces.detJ[:, None, None] * np.einsum(
            "mab,mqb->mqa", new_spaces.Jinv, vals)
        mono = _mono_vals(basis.int_exps, tab.ref_points)
        nsi = len(basis.int_exps)
        cint = np.einsum("q,qk,mqc->mck", tab.ref_weights, mono, vhat)
        coeffs[E * nf:] = cint.reshape(M, 2 * nsi).ravel()
    return coeffs
