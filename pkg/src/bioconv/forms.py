"""Assembly of the coupled nonlinear system.

Residual rows follow the test-space block order (t, u, sig, phi, tt, st,
then the two constraint rows). The sig-row carries the weak Dirichlet
velocity data and the multiplier coupling lam1 * integral(tr tau); the
phi-row carries the manufactured concentration source and lam2. Essential
normal-trace data on the concentration flux is applied by replacing the
rows of its boundary facet dofs.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fem import TRACEFREE_BASIS, shifted_legendre, facet_param_points

# sym(E_b) : E_a for the trace-free component basis
_SYM = np.einsum("bij,aij->ab",
                 0.5 * (TRACEFREE_BASIS + TRACEFREE_BASIS.transpose(0, 2, 1)),
                 TRACEFREE_BASIS)


class ModelError(Exception):
    pass


@dataclass
class ModelData:
    """Coefficients, callbacks and constraint data of one problem instance.

    Callbacks are numpy-vectorized over point arrays of shape (..., 2).
    `mu`/`dmu` act on the total concentration (translated unknown + alpha).
    """

    mu: object
    dmu: object
    kappa: float
    g: float
    gamma: float
    alpha: float
    U: float
    f: object
    u_dirichlet: object
    grad_u_dirichlet: object = None
    sigtilde_normal: object = None
    conc_source: object = None
    phi_mean: float = 0.0
    trsigma_mean: float = 0.0
    e_d: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0]))

    def __post_init__(self):
        if self.kappa < 0 or self.g < 0 or self.U < 0 or self.alpha < 0:
            raise ModelError("kappa, g, U, alpha must be nonnegative")


@dataclass
class SystemState:
    """Coefficient vectors of the six unknowns plus the two multipliers."""

    t: np.ndarray
    u: np.ndarray
    sig: np.ndarray
    phi: np.ndarray
    tt: np.ndarray
    st: np.ndarray
    lam_trsigma: float = 0.0
    lam_phimean: float = 0.0

    @classmethod
    def zeros(cls, spaces):
        dm = spaces.dofmaps
        return cls(t=np.zeros(dm["t"].n_dofs), u=np.zeros(dm["u"].n_dofs),
                   sig=np.zeros(dm["sig"].n_dofs), phi=np.zeros(dm["phi"].n_dofs),
                   tt=np.zeros(dm["tt"].n_dofs), st=np.zeros(dm["st"].n_dofs))

    def pack(self, spaces):
        return np.concatenate([self.t, self.u, self.sig, self.phi, self.tt,
                               self.st, [self.lam_trsigma, self.lam_phimean]])

    @classmethod
    def unpack(cls, vec, spaces):
        parts = {}
        for k in spaces.BLOCKS:
            off = spaces.offsets[k]
            parts[k] = vec[off:off + spaces.dofmaps[k].n_dofs].copy()
        return cls(t=parts["t"], u=parts["u"], sig=parts["sig"], phi=parts["phi"],
                   tt=parts["tt"], st=parts["st"],
                   lam_trsigma=float(vec[spaces.lam1]),
                   lam_phimean=float(vec[spaces.lam2]))


@dataclass
class SparseSystem:
    residual: np.ndarray
    jacobian: sp.csr_matrix
    n: int


def eval_viscosity_profile(name):
    """Named viscosity profiles: 'exp-decay' or 'constant(value)'."""
    if name == "exp-decay":
        return (lambda s: np.exp(-s)), (lambda s: -np.exp(-s))
    if name.startswith("constant(") and name.endswith(")"):
        nu = float(name[len("constant("):-1])
        return (lambda s: np.full_like(np.asarray(s, dtype=float), nu),
                lambda s: np.zeros_like(np.asarray(s, dtype=float)))
    raise ModelError(f"unknown viscosity profile {name!r}")


def eval_state_fields(state, spaces, tab=None):
    """All solution fields at the volume quadrature points."""
    tab = tab or spaces.vol
    t = spaces.dg_tensor_at(state.t, tab)
    u = spaces.dg_vector_at(state.u, tab)
    sig, divsig = spaces.rt_tensor_at(state.sig, tab)
    phi = spaces.dg_scalar_at(state.phi, tab)
    tt = spaces.dg_vector_at(state.tt, tab)
    st, divst = spaces.rt_vector_at(state.st, tab)
    return dict(t=t, tsym=0.5 * (t + t.transpose(0, 1, 3, 2)), u=u,
                sig=sig, divsig=divsig, phi=phi, tt=tt, st=st, divst=divst)


def _viscosity_values(data, phi_vals):
    conc = phi_vals + data.alpha
    mu = np.asarray(data.mu(conc), dtype=float)
    if np.any(mu <= 0):
        raise ModelError("viscosity must stay positive at quadrature points")
    return mu, np.asarray(data.dmu(conc), dtype=float)


def _boundary_groups(spaces):
    """Boundary facets grouped by the owner cell's local edge index."""
    tri = spaces.mesh
    groups = []
    bfacets = tri.boundary_facets
    if len(bfacets) == 0:
        return groups
    owners = tri.facet_cells[bfacets, 0]
    local = np.array([tri.cell_local_edge(c, f) for c, f in zip(owners, bfacets)])
    for i in range(3):
        sel = local == i
        if sel.any():
            groups.append((i, bfacets[sel], owners[sel]))
    return groups


def _rt_edge_values(spaces, local_edge, cells):
    """Signed Piola values of the RT basis along one local edge of the given
    cells, owner orientation: (ncells, nq1, nloc, 2)."""
    et = spaces.tabulate_edges()
    ref = et.redge[local_edge]
    J = spaces.J[cells]
    detJ = spaces.detJ[cells]
    signs = spaces.dofmaps["st"].cell_signs[cells]
    vals = np.einsum("oab,qlb->oqla", J, ref) / detJ[:, None, None, None]
    return vals * signs[:, None, :, None]


def apply_sigtilde_normal_data(spaces, data):
    """Essential data for the concentration-flux boundary dofs.

    Returns (global dof indices, prescribed values): the facet normal
    moments of the given boundary flux (zero when no callback is set).
    """
    from .fem import edge_rule

    tri = spaces.mesh
    ell = spaces.degree
    nf = ell + 1
    bfacets = tri.boundary_facets
    dm = spaces.dofmaps["st"]
    idx = (spaces.offsets["st"] + dm.facet_dofs[bfacets]).ravel()
    if data.sigtilde_normal is None or len(bfacets) == 0:
        return idx, np.zeros(idx.size)
    s1d, w1d = edge_rule(spaces.edge_degree)
    pts, _ = facet_param_points(tri, bfacets, s1d)
    normals = tri.facet_normals[bfacets]
    vn = np.asarray(data.sigtilde_normal(pts, normals[:, None, :]))
    L = tri.facet_diameters[bfacets]
    vals = np.empty((len(bfacets), nf))
    for m in range(nf):
        P = shifted_legendre(m, s1d)
        vals[:, m] = L * np.einsum("q,q,fq->f", w1d, P, vn)
    return idx, vals.ravel()


class _Accumulator:
    def __init__(self, n, want_jacobian):
        self.res = np.zeros(n)
        self.want = want_jacobian
        self.rows = []
        self.cols = []
        self.vals = []

    def add_res(self, dofs, contrib):
        np.add.at(self.res, dofs.ravel(), contrib.ravel())

    def add_jac(self, test_dofs, trial_dofs, block):
        if not self.want:
            return
        M, A = test_dofs.shape
        B = trial_dofs.shape[1]
        self.rows.append(np.repeat(test_dofs, B, axis=1).ravel())
        self.cols.append(np.tile(trial_dofs, (1, A)).ravel())
        self.vals.append(block.reshape(M, A * B).ravel())

    def add_scalar_jac(self, row, col, val):
        if not self.want:
            return
        self.rows.append(np.atleast_1d(np.asarray(row, dtype=np.int64)).ravel())
        self.cols.append(np.atleast_1d(np.asarray(col, dtype=np.int64)).ravel())
        self.vals.append(np.atleast_1d(np.asarray(val, dtype=float)).ravel())


def _assemble(state, data, spaces, want_jacobian, mode="newton"):
    tri = spaces.mesh
    tab = spaces.vol
    W = tab.qweights
    X = tab.qpoints
    SV = tab.sv
    RTV = tab.rtv
    RTD = tab.rtd
    ns = spaces.scalar.dim
    nl = spaces.rt.dim
    newton = mode == "newton"

    F = eval_state_fields(state, spaces, tab)
    mu, dmu = _viscosity_values(data, F["phi"])
    fvals = np.asarray(data.f(X))
    gsrc = np.asarray(data.conc_source(X)) if data.conc_source is not None else None
    ed = data.e_d

    dofs = {}
    for k in spaces.BLOCKS:
        dofs[k] = spaces.dofmaps[k].cell_dofs + spaces.offsets[k]
    sig_rows = [dofs["sig"][:, r * nl:(r + 1) * nl] for r in range(2)]
    acc = _Accumulator(spaces.n_dofs, want_jacobian)

    def mass(weight):
        return np.einsum("mq,qk,qj->mkj", W * weight, SV, SV)

    def dg_vec(weight):
        return np.einsum("mq,qk->mk", W * weight, SV)

    # cached scalar contractions with the trace-free basis
    G = np.einsum("mqij,aij->mqa", F["tsym"], TRACEFREE_BASIS)
    UU = np.einsum("mqi,mqj,aij->mqa", F["u"], F["u"], TRACEFREE_BASIS)
    SS = np.einsum("mqij,aij->mqa", F["sig"], TRACEFREE_BASIS)
    Eu = np.einsum("aij,mqj->mqai", TRACEFREE_BASIS, F["u"])       # (E_a u)_i
    Etu = np.einsum("aji,mqj->mqai", TRACEFREE_BASIS, F["u"])      # (E_a^t u)_i
    tu = np.einsum("mqij,mqj->mqi", F["t"], F["u"])
    ttu = np.einsum("mqi,mqi->mq", F["tt"], F["u"])

    # ---- t-test rows: 2 mu tsym:r - 1/2 (u x u):r - sig:r -------------
    for a in range(3):
        Fa = 2.0 * mu * G[:, :, a] - 0.5 * UU[:, :, a] - SS[:, :, a]
        acc.add_res(dofs["t"][:, a * ns:(a + 1) * ns], dg_vec(Fa))
    if want_jacobian:
        Mmu = mass(mu)
        for a in range(3):
            ta = dofs["t"][:, a * ns:(a + 1) * ns]
            for b in range(3):
                if _SYM[a, b] != 0.0:
                    acc.add_jac(ta, dofs["t"][:, b * ns:(b + 1) * ns],
                                2.0 * _SYM[a, b] * Mmu)
            for c in range(2):
                uc = dofs["u"][:, c * ns:(c + 1) * ns]
                if newton:
                    wgt = -0.5 * (Eu[:, :, a, c] + Etu[:, :, a, c])
                else:
                    wgt = -0.5 * Eu[:, :, a, c]
                acc.add_jac(ta, uc, mass(wgt))
            for r in range(2):
                # -(sig:E_a): row r contributes E_a[r, :] . Phi_l
                blk = -np.einsum("mq,qk,mqlj,j->mkl", W, SV, RTV,
                                 TRACEFREE_BASIS[a, r])
                acc.add_jac(ta, sig_rows[r], blk)
            if newton:
                acc.add_jac(ta, dofs["phi"], mass(2.0 * dmu * G[:, :, a]))

    # ---- u-test rows: 1/2 (t u) - div sig - f + g[1+gamma(phi+a)]e_d --
    buoy = data.g * (1.0 + data.gamma * (F["phi"] + data.alpha))
    for c in range(2):
        Fc = 0.5 * tu[:, :, c] - F["divsig"][:, :, c] - fvals[:, :, c] + buoy * ed[c]
        acc.add_res(dofs["u"][:, c * ns:(c + 1) * ns], dg_vec(Fc))
    if want_jacobian:
        Mdiv = np.einsum("mq,qk,mql->mkl", W, SV, RTD)
        for c in range(2):
            uc = dofs["u"][:, c * ns:(c + 1) * ns]
            for b in range(3):
                blk = mass(0.5 * np.einsum("j,mqj->mq", TRACEFREE_BASIS[b, c], F["u"]))
                acc.add_jac(uc, dofs["t"][:, b * ns:(b + 1) * ns], blk)
            if newton:
                for d in range(2):
                    acc.add_jac(uc, dofs["u"][:, d * ns:(d + 1) * ns],
                                mass(0.5 * F["t"][:, :, c, d]))
                if ed[c] != 0.0:
                    acc.add_jac(uc, dofs["phi"],
                                data.g * data.gamma * ed[c] * mass(np.ones_like(mu)))
            acc.add_jac(uc, sig_rows[c], -Mdiv)

    # ---- sig-test rows: t:tau + u.div tau - <tau n, u_D> + lam1 tr tau
    TRS = [np.einsum("mq,mql->ml", W, RTV[:, :, :, r]) for r in range(2)]
    for r in range(2):
        contrib = (np.einsum("mq,mqj,mqlj->ml", W, F["t"][:, :, r, :], RTV)
                   + np.einsum("mq,mql->ml", W * F["u"][:, :, r], RTD)
                   + state.lam_trsigma * TRS[r])
        acc.add_res(sig_rows[r], contrib)
    if want_jacobian:
        for r in range(2):
            for b in range(3):
                blk = np.einsum("mq,mqlj,j,qk->mlk", W, RTV,
                                TRACEFREE_BASIS[b, r], SV)
                acc.add_jac(sig_rows[r], dofs["t"][:, b * ns:(b + 1) * ns], blk)
            blk = np.einsum("mq,mql,qk->mlk", W, RTD, SV)
            acc.add_jac(sig_rows[r], dofs["u"][:, r * ns:(r + 1) * ns], blk)
            acc.add_scalar_jac(sig_rows[r].ravel(),
                               np.full(sig_rows[r].size, spaces.lam1), TRS[r].ravel())
            acc.add_scalar_jac(np.full(sig_rows[r].size, spaces.lam1),
                               sig_rows[r].ravel(), TRS[r].ravel())

    # weak Dirichlet data on the sig rows
    _dirichlet_boundary_term(spaces, data, acc, sig_rows, nl)

    # ---- phi-test rows: 1/2 tt.u - div st - gsrc + lam2 ---------------
    Fphi = 0.5 * ttu - F["divst"] + state.lam_phimean
    if gsrc is not None:
        Fphi = Fphi - gsrc
    acc.add_res(dofs["phi"], dg_vec(Fphi))
    PHI_INT = dg_vec(np.ones_like(mu))
    if want_jacobian:
        for c in range(2):
            acc.add_jac(dofs["phi"], dofs["tt"][:, c * ns:(c + 1) * ns],
                        mass(0.5 * F["u"][:, :, c]))
            if newton:
                acc.add_jac(dofs["phi"], dofs["u"][:, c * ns:(c + 1) * ns],
                            mass(0.5 * F["tt"][:, :, c]))
        Mdiv = np.einsum("mq,qk,mql->mkl", W, SV, RTD)
        acc.add_jac(dofs["phi"], dofs["st"], -Mdiv)
        acc.add_scalar_jac(dofs["phi"].ravel(),
                           np.full(dofs["phi"].size, spaces.lam2), PHI_INT.ravel())
        acc.add_scalar_jac(np.full(dofs["phi"].size, spaces.lam2),
                           dofs["phi"].ravel(), PHI_INT.ravel())

    # ---- tt-test rows: kappa tt - U phi e_d - 1/2 u phi - st - aU e_d -
    for c in range(2):
        Fc = (data.kappa * F["tt"][:, :, c] - data.U * F["phi"] * ed[c]
              - 0.5 * F["u"][:, :, c] * F["phi"] - F["st"][:, :, c]
              - data.alpha * data.U * ed[c])
        acc.add_res(dofs["tt"][:, c * ns:(c + 1) * ns], dg_vec(Fc))
    if want_jacobian:
        Mkap = mass(np.full_like(mu, data.kappa))
        for c in range(2):
            ttc = dofs["tt"][:, c * ns:(c + 1) * ns]
            acc.add_jac(ttc, dofs["tt"][:, c * ns:(c + 1) * ns], Mkap)
            acc.add_jac(ttc, dofs["phi"],
                        mass(-data.U * ed[c] - 0.5 * F["u"][:, :, c]))
            if newton:
                acc.add_jac(ttc, dofs["u"][:, c * ns:(c + 1) * ns],
                            mass(-0.5 * F["phi"]))
            blk = -np.einsum("mq,qk,mql->mkl", W, SV, RTV[:, :, :, c])
            acc.add_jac(ttc, dofs["st"], blk)

    # ---- st-test rows: tt.taut + phi div taut --------------------------
    contrib = (np.einsum("mq,mqj,mqlj->ml", W, F["tt"], RTV)
               + np.einsum("mq,mql->ml", W * F["phi"], RTD))
    acc.add_res(dofs["st"], contrib)
    if want_jacobian:
        for c in range(2):
            blk = np.einsum("mq,mql,qk->mlk", W, RTV[:, :, :, c], SV)
            acc.add_jac(dofs["st"], dofs["tt"][:, c * ns:(c + 1) * ns], blk)
        blk = np.einsum("mq,mql,qk->mlk", W, RTD, SV)
        acc.add_jac(dofs["st"], dofs["phi"], blk)

    # ---- constraint rows ----------------------------------------------
    tr_sig = F["sig"][:, :, 0, 0] + F["sig"][:, :, 1, 1]
    acc.res[spaces.lam1] = np.sum(W * tr_sig) - data.trsigma_mean
    acc.res[spaces.lam2] = np.sum(W * F["phi"]) - data.phi_mean

    if not want_jacobian:
        return acc.res, None

    J = sp.coo_matrix(
        (np.concatenate(acc.vals),
         (np.concatenate(acc.rows), np.concatenate(acc.cols))),
        shape=(spaces.n_dofs, spaces.n_dofs)).tocsr()
    return acc.res, J


def _dirichlet_boundary_term(spaces, data, acc, sig_rows, nl):
    """-<tau n, u_D> on the boundary, added to the sig residual rows."""
    from .fem import edge_rule

    tri = spaces.mesh
    s1d, w1d = edge_rule(spaces.edge_degree)
    for i, facets, owners in _boundary_groups(spaces):
        pts, _ = facet_param_points(tri, facets, s1d)
        uD = np.asarray(data.u_dirichlet(pts))
        normals = tri.facet_normals[facets]
        vals = _rt_edge_values(spaces, i, owners)
        vn = np.einsum("oqla,oa->oql", vals, normals)
        wq = tri.facet_diameters[facets][:, None] * w1d[None, :]
        for r in range(2):
            contrib = -np.einsum("oq,oql->ol", wq * uD[:, :, r], vn)
            np.add.at(acc.res, sig_rows[r][owners].ravel(), contrib.ravel())


def _constrain(res, jac, fixed_idx, fixed_vals, x):
    res = res.copy()
    res[fixed_idx] = x[fixed_idx] - fixed_vals
    if jac is None:
        return res, None
    jac = jac.tocoo()
    keep = ~np.isin(jac.row, fixed_idx)
    rows = np.concatenate([jac.row[keep], fixed_idx])
    cols = np.concatenate([jac.col[keep], fixed_idx])
    vals = np.concatenate([jac.data[keep], np.ones(fixed_idx.size)])
    out = sp.coo_matrix((vals, (rows, cols)), shape=jac.shape).tocsr()
    return res, out


def assemble_residual(state, data, spaces, apply_essential=True):
    """Nonlinear residual at the given state."""
    res, _ = _assemble(state, data, spaces, want_jacobian=False)
    if apply_essential:
        idx, vals = apply_sigtilde_normal_data(spaces, data)
        x = state.pack(spaces)
        res, _ = _constrain(res, None, idx, vals, x)
    return res


def assemble_jacobian(state, data, spaces, mode="newton", apply_essential=True):
    """Residual and Jacobian (exact Gateaux derivative, or the fixed-point
    linearization for mode='picard')."""
    if mode not in ("newton", "picard"):
        raise ModelError(f"unknown linearization mode {mode!r}")
    res, jac = _assemble(state, data, spaces, want_jacobian=True, mode=mode)
    if apply_essential:
        idx, vals = apply_sigtilde_normal_data(spaces, data)
        x = state.pack(spaces)
        res, jac = _constrain(res, jac, idx, vals, x)
    return SparseSystem(residual=res, jacobian=jac, n=spaces.n_dofs)


def interpolate_state(exact, spaces):
    """SystemState holding the interpolants of the exact mixed fields."""
    from .fem import interpolate

    tri = spaces.mesh
    fams = spaces.families
    return SystemState(
        t=interpolate(exact.t, fams["t"], tri, spaces.dofmaps["t"]),
        u=interpolate(exact.u, fams["u"], tri, spaces.dofmaps["u"]),
        sig=interpolate(exact.sigma, fams["sig"], tri, spaces.dofmaps["sig"]),
        phi=interpolate(exact.phi, fams["phi"], tri, spaces.dofmaps["phi"]),
        tt=interpolate(exact.t_tilde, fams["tt"], tri, spaces.dofmaps["tt"]),
        st=interpolate(exact.sigma_tilde, fams["st"], tri, spaces.dofmaps["st"]))


def convection_value(spaces, w_coeffs, a_pair, b_pair):
    """C(w; a, b) evaluated by quadrature; returns (value, magnitude scale)."""
    W = spaces.vol.qweights
    w = spaces.dg_vector_at(w_coeffs)
    ta = spaces.dg_tensor_at(a_pair[0])
    ua = spaces.dg_vector_at(a_pair[1])
    rb = spaces.dg_tensor_at(b_pair[0])
    ub = spaces.dg_vector_at(b_pair[1])
    term1 = np.sum(W * np.einsum("mqij,mqj,mqi->mq", ta, w, ub))
    term2 = np.sum(W * np.einsum("mqij,mqj,mqi->mq", rb, w, ua))
    return 0.5 * (term1 - term2), 0.5 * (abs(term1) + abs(term2))


def convection_tilde_value(spaces, w_coeffs, a_pair, b_pair):
    """C~(w; a, b) for the concentration pair (tt, phi)."""
    W = spaces.vol.qweights
    w = spaces.dg_vector_at(w_coeffs)
    tta = spaces.dg_vector_at(a_pair[0])
    pa = spaces.dg_scalar_at(a_pair[1])
    rtb = spaces.dg_vector_at(b_pair[0])
    pb = spaces.dg_scalar_at(b_pair[1])
    term1 = np.sum(W * np.einsum("mqj,mqj->mq", tta, w) * pb)
    term2 = np.sum(W * np.einsum("mqj,mqj->mq", rtb, w) * pa)
    return 0.5 * (term1 - term2), 0.5 * (abs(term1) + abs(term2))
