"""Reference elements, quadrature, Piola mapping, dof maps, interpolation.

Discontinuous spaces use an L2-orthonormal basis on the reference
triangle, so physical mass matrices are detJ times the identity.
Raviart-Thomas spaces are built as a nodal basis dual to facet normal
moments (shifted Legendre weights along the facet) plus interior moments,
and mapped by the contravariant Piola transform. Facet moments are
parametrized along the global facet tangent (the owner cell's
counterclockwise traversal direction), which makes the owner's local
orientation the global one; the neighboring cell picks up the sign
(-1)^(m+1) on its m-th facet moment.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import legval
from scipy.special import roots_jacobi, roots_legendre

from .mesh import Triangulation


class FemError(Exception):
    pass


REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
# local edge i is opposite local vertex i, traversed counterclockwise
LOCAL_EDGES = ((1, 2), (2, 0), (0, 1))

DG_KINDS = ("dg-scalar", "dg-vector", "dg-tensor-tracefree")
RT_KINDS = ("rt-vector", "rt-tensor")

# trace-free 2x2 tensor component basis
TRACEFREE_BASIS = np.array([
    [[1.0, 0.0], [0.0, -1.0]],
    [[0.0, 1.0], [0.0, 0.0]],
    [[0.0, 0.0], [1.0, 0.0]],
])


@dataclass(frozen=True)
class ElementFamily:
    kind: str
    degree: int

    def __post_init__(self):
        if self.kind not in DG_KINDS + RT_KINDS:
            raise FemError(f"unknown element kind {self.kind!r}")
        if self.degree < 0:
            raise FemError("degree must be nonnegative")


@dataclass(frozen=True)
class QuadratureRule:
    """Symmetric positive rule on the reference triangle.

    points are barycentric coordinates (nq, 3); weights sum to 1/2."""

    degree: int
    points: np.ndarray
    weights: np.ndarray

    @property
    def xy(self):
        return self.points[:, 1:]


@lru_cache(maxsize=None)
def quadrature_rule(degree):
    """Symmetric rule exact for polynomials up to `degree`, 1 <= degree <= 10.

    Built from the conical-product Gauss-Jacobi rule averaged over the six
    symmetries of the triangle: positive weights by construction.
    """
    if not 1 <= degree <= 10:
        raise FemError(f"quadrature degree {degree} out of range [1, 10]")
    n = (degree + 2) // 2
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    xi = 0.5 * (1.0 + xj)
    wxi = 0.25 * wj
    xl, wl = roots_legendre(n)
    eta = 0.5 * (1.0 + xl)
    weta = 0.5 * wl
    x = np.repeat(xi, n)
    y = np.tile(eta, n) * (1.0 - x)
    w = np.repeat(wxi, n) * np.tile(weta, n)
    lam = np.column_stack([1.0 - x - y, x, y])
    perms = [(0, 1, 2), (1, 2, 0), (2, 0, 1), (0, 2, 1), (2, 1, 0), (1, 0, 2)]
    pts = np.concatenate([lam[:, p] for p in perms])
    wts = np.concatenate([w] * 6) / 6.0
    return QuadratureRule(degree=degree, points=pts, weights=wts)


@lru_cache(maxsize=None)
def edge_rule(degree):
    """Gauss rule on [0, 1] exact to `degree`; nodes ascending, symmetric."""
    n = (degree + 2) // 2
    x, w = roots_legendre(n)
    return 0.5 * (1.0 + x), 0.5 * w


def shifted_legendre(m, s):
    """Legendre polynomial of degree m on [0, 1]."""
    c = np.zeros(m + 1)
    c[m] = 1.0
    return legval(2.0 * np.asarray(s) - 1.0, c)


def _monomial_exponents(degree):
    return [(d - b, b) for d in range(degree + 1) for b in range(d + 1)]


def _mono_vals(exps, pts):
    x, y = pts[:, 0], pts[:, 1]
    return np.stack([x ** a * y ** b for a, b in exps], axis=1)


def _mono_grads(exps, pts):
    x, y = pts[:, 0], pts[:, 1]
    out = np.zeros((len(pts), len(exps), 2))
    for j, (a, b) in enumerate(exps):
        if a > 0:
            out[:, j, 0] = a * x ** (a - 1) * y ** b
        if b > 0:
            out[:, j, 1] = b * x ** a * y ** (b - 1)
    return out


class ScalarBasis:
    """L2-orthonormal polynomial basis of degree <= ell on the reference cell."""

    def __init__(self, degree):
        self.degree = degree
        self.exps = _monomial_exponents(degree)
        self.dim = len(self.exps)
        rule = quadrature_rule(min(10, max(1, 2 * degree + 2)))
        V = _mono_vals(self.exps, rule.xy)
        gram = V.T @ (rule.weights[:, None] * V)
        L = np.linalg.cholesky(gram)
        self.coeffs = np.linalg.inv(L).T  # (nmono, dim), columns orthonormal

    def eval(self, pts):
        return _mono_vals(self.exps, pts) @ self.coeffs

    def grad(self, pts):
        return np.einsum("qmd,mk->qkd", _mono_grads(self.exps, pts), self.coeffs)


@lru_cache(maxsize=None)
def scalar_basis(degree):
    return ScalarBasis(degree)


class RTBasis:
    """Nodal Raviart-Thomas basis of order ell on the reference triangle.

    Local dof order: edge 0 moments m=0..ell, edge 1, edge 2, then interior
    moments against P_{ell-1} monomials (component-major).
    """

    def __init__(self, degree):
        ell = degree
        self.degree = ell
        self.n_edge = ell + 1
        self.int_exps = _monomial_exponents(ell - 1) if ell >= 1 else []
        self.n_interior = 2 * len(self.int_exps)
        self.dim = (ell + 1) * (ell + 3)
        # generators: e_c x^a y^b for a+b <= ell, then (x, y) x^a y^b for a+b = ell
        gens = [("mono", a, b, c) for c in (0, 1) for a, b in _monomial_exponents(ell)]
        gens += [("radial", a, b, None) for a, b in _monomial_exponents(ell)
                 if a + b == ell]
        assert len(gens) == self.dim
        self.gens = gens
        V = np.zeros((self.dim, self.dim))
        s1d, w1d = edge_rule(2 * ell + 2)
        for i, (e0, e1) in enumerate(LOCAL_EDGES):
            A, B = REF_VERTICES[e0], REF_VERTICES[e1]
            d = B - A
            length = np.linalg.norm(d)
            normal = np.array([d[1], -d[0]]) / length
            pts = A[None, :] + s1d[:, None] * d[None, :]
            gv = self._gen_vals(pts)  # (nq, ngen, 2)
            vn = gv @ normal  # (nq, ngen)
            for m in range(ell + 1):
                row = i * (ell + 1) + m
                P = shifted_legendre(m, s1d)
                V[row] = length * np.einsum("q,q,qg->g", w1d, P, vn)
        if self.n_interior:
            rule = quadrature_rule(min(10, max(1, 2 * ell + 2)))
            gv = self._gen_vals(rule.xy)
            mono = _mono_vals(self.int_exps, rule.xy)
            base = 3 * (ell + 1)
            for c in (0, 1):
                for k in range(len(self.int_exps)):
                    row = base + c * len(self.int_exps) + k
                    V[row] = np.einsum("q,q,qg->g", rule.weights, mono[:, k], gv[:, :, c])
        self.coeffs = np.linalg.inv(V)  # (ngen, ndof) columns are nodal fns

    def _gen_vals(self, pts):
        x, y = pts[:, 0], pts[:, 1]
        out = np.zeros((len(pts), self.dim, 2))
        for g, (kind, a, b, c) in enumerate(self.gens):
            mono = x ** a * y ** b
            if kind == "mono":
                out[:, g, c] = mono
            else:
                out[:, g, 0] = mono * x
                out[:, g, 1] = mono * y
        return out

    def _gen_divs(self, pts):
        x, y = pts[:, 0], pts[:, 1]
        out = np.zeros((len(pts), self.dim))
        for g, (kind, a, b, c) in enumerate(self.gens):
            if kind == "mono":
                if c == 0 and a > 0:
                    out[:, g] = a * x ** (a - 1) * y ** b
                elif c == 1 and b > 0:
                    out[:, g] = b * x ** a * y ** (b - 1)
            else:
                out[:, g] = (a + b + 2) * x ** a * y ** b
        return out

    def _gen_grads(self, pts):
        """d(gen component c)/d x_d, shape (nq, ngen, 2, 2)."""
        x, y = pts[:, 0], pts[:, 1]
        out = np.zeros((len(pts), self.dim, 2, 2))
        for g, (kind, a, b, c) in enumerate(self.gens):
            dx = a * x ** (a - 1) * y ** b if a > 0 else np.zeros_like(x)
            dy = b * x ** a * y ** (b - 1) if b > 0 else np.zeros_like(x)
            if kind == "mono":
                out[:, g, c, 0] = dx
                out[:, g, c, 1] = dy
            else:
                mono = x ** a * y ** b
                out[:, g, 0, 0] = dx * x + mono
                out[:, g, 0, 1] = dy * x
                out[:, g, 1, 0] = dx * y
                out[:, g, 1, 1] = dy * y + mono
        return out

    def eval(self, pts):
        return np.einsum("qgc,gl->qlc", self._gen_vals(pts), self.coeffs)

    def div(self, pts):
        return self._gen_divs(pts) @ self.coeffs

    def grad(self, pts):
        return np.einsum("qgcd,gl->qlcd", self._gen_grads(pts), self.coeffs)


@lru_cache(maxsize=None)
def rt_basis(degree):
    return RTBasis(degree)


def local_dim(family):
    ns = scalar_basis(family.degree).dim
    if family.kind == "dg-scalar":
        return ns
    if family.kind == "dg-vector":
        return 2 * ns
    if family.kind == "dg-tensor-tracefree":
        return 3 * ns
    nrt = rt_basis(family.degree).dim
    return nrt if family.kind == "rt-vector" else 2 * nrt


@dataclass
class DofMap:
    family: ElementFamily
    cell_dofs: np.ndarray
    n_dofs: int
    facet_dofs: np.ndarray | None = None
    cell_signs: np.ndarray | None = None


def build_dofmap(family, tri: Triangulation):
    """Cell-to-global dof tables; RT facet dofs are globally oriented."""
    M = tri.num_cells
    nloc = local_dim(family)
    if family.kind in DG_KINDS:
        cell_dofs = np.arange(M * nloc, dtype=np.int64).reshape(M, nloc)
        return DofMap(family=family, cell_dofs=cell_dofs, n_dofs=M * nloc)

    ell = family.degree
    basis = rt_basis(ell)
    E = tri.num_facets
    nf = ell + 1
    nint = basis.n_interior
    n_vec = E * nf + M * nint
    facet_dofs = (np.arange(E, dtype=np.int64)[:, None] * nf
                  + np.arange(nf, dtype=np.int64)[None, :])
    cell_dofs = np.empty((M, basis.dim), dtype=np.int64)
    signs = np.ones((M, basis.dim))
    owner = tri.facet_cells[:, 0]
    for i in range(3):
        f = tri.cell_facets[:, i]
        cell_dofs[:, i * nf:(i + 1) * nf] = facet_dofs[f]
        not_owner = owner[f] != np.arange(M)
        # neighbor sees the facet reversed: sign (-1)^(m+1) on moment m
        for m in range(nf):
            signs[not_owner, i * nf + m] = -1.0 if m % 2 == 0 else 1.0
    if nint:
        cell_dofs[:, 3 * nf:] = (E * nf + np.arange(M, dtype=np.int64)[:, None] * nint
                                 + np.arange(nint, dtype=np.int64)[None, :])
    if family.kind == "rt-vector":
        return DofMap(family=family, cell_dofs=cell_dofs, n_dofs=n_vec,
                      facet_dofs=facet_dofs, cell_signs=signs)
    # rt-tensor: two stacked row copies
    cd = np.concatenate([cell_dofs, cell_dofs + n_vec], axis=1)
    fd = np.concatenate([facet_dofs, facet_dofs + n_vec], axis=1)
    return DofMap(family=family, cell_dofs=cd, n_dofs=2 * n_vec,
                  facet_dofs=fd, cell_signs=np.concatenate([signs, signs], axis=1))


def cell_geometry(tri):
    """Affine maps of all cells: (J, Jinv, detJ, origin)."""
    p = tri.vertices[tri.cells]
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
    detJ = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    Jinv = np.empty_like(J)
    Jinv[:, 0, 0] = J[:, 1, 1] / detJ
    Jinv[:, 0, 1] = -J[:, 0, 1] / detJ
    Jinv[:, 1, 0] = -J[:, 1, 0] / detJ
    Jinv[:, 1, 1] = J[:, 0, 0] / detJ
    return J, Jinv, detJ, p[:, 0]


def map_points(tri, ref_pts):
    """Physical images of reference points in every cell: (M, nq, 2)."""
    J, _, _, x0 = cell_geometry(tri)
    return x0[:, None, :] + np.einsum("mab,qb->mqa", J, ref_pts)


def eval_dg_basis(family, tri, cell, ref_pts):
    """Values and physical gradients of the local DG basis on one cell."""
    if family.kind not in DG_KINDS:
        raise FemError("eval_dg_basis requires a DG family")
    sb = scalar_basis(family.degree)
    _, Jinv, _, _ = cell_geometry(tri)
    sv = sb.eval(ref_pts)
    sg = np.einsum("ba,qkb->qka", Jinv[cell], sb.grad(ref_pts))
    ns = sb.dim
    nq = len(ref_pts)
    if family.kind == "dg-scalar":
        return sv, sg
    if family.kind == "dg-vector":
        vals = np.zeros((nq, 2 * ns, 2))
        grads = np.zeros((nq, 2 * ns, 2, 2))
        for c in range(2):
            vals[:, c * ns:(c + 1) * ns, c] = sv
            grads[:, c * ns:(c + 1) * ns, c, :] = sg
        return vals, grads
    vals = np.zeros((nq, 3 * ns, 2, 2))
    grads = np.zeros((nq, 3 * ns, 2, 2, 2))
    for a in range(3):
        E = TRACEFREE_BASIS[a]
        vals[:, a * ns:(a + 1) * ns] = sv[:, :, None, None] * E
        grads[:, a * ns:(a + 1) * ns] = sg[:, :, None, None, :] * E[:, :, None]
    return vals, grads


def eval_rt_basis(family, tri, cell, ref_pts):
    """Piola-mapped values and divergences of the local RT basis on one cell.

    Single-cell view without inter-cell orientation signs (those live in
    the DofMap)."""
    if family.kind not in RT_KINDS:
        raise FemError("eval_rt_basis requires an RT family")
    basis = rt_basis(family.degree)
    J, _, detJ, _ = cell_geometry(tri)
    if detJ[cell] <= 0:
        raise FemError(f"degenerate cell {cell}")
    vals = np.einsum("ab,qlb->qla", J[cell], basis.eval(ref_pts)) / detJ[cell]
    divs = basis.div(ref_pts) / detJ[cell]
    if family.kind == "rt-vector":
        return vals, divs
    nq, nloc = vals.shape[:2]
    tvals = np.zeros((nq, 2 * nloc, 2, 2))
    tdivs = np.zeros((nq, 2 * nloc, 2))
    for r in range(2):
        tvals[:, r * nloc:(r + 1) * nloc, r, :] = vals
        tdivs[:, r * nloc:(r + 1) * nloc, r] = divs
    return tvals, tdivs


def facet_param_points(tri, facets, s1d):
    """Physical points along each facet at parameters s1d measured along the
    facet tangent; returns (points (F, nq, 2), start vertices (F,))."""
    a = tri.facets[facets, 0]
    b = tri.facets[facets, 1]
    va, vb = tri.vertices[a], tri.vertices[b]
    along = np.einsum("fd,fd->f", vb - va, tri.facet_tangents[facets]) > 0
    start = np.where(along, va.T, vb.T).T
    end = np.where(along, vb.T, va.T).T
    pts = start[:, None, :] + s1d[None, :, None] * (end - start)[:, None, :]
    return pts, np.where(along, a, b)


class DiscreteSpaces:
    """All six solution spaces on one barycentric mesh, with tabulations.

    Block order: t (trace-free tensor DG), u (vector DG), sig (tensor RT),
    phi (scalar DG), tt (vector DG), st (vector RT), then the two scalar
    multipliers (trace of sig, mean of phi) at the end.
    """

    BLOCKS = ("t", "u", "sig", "phi", "tt", "st")

    def __init__(self, hierarchy, degree):
        if degree < 1:
            raise FemError("coupled spaces need degree >= 1")
        self.hierarchy = hierarchy
        self.mesh = hierarchy.bary
        self.degree = degree
        self.vol_degree = max(4, 2 * degree + 2)
        self.edge_degree = 2 * degree + 2

        tri = self.mesh
        self.J, self.Jinv, self.detJ, self.x0 = cell_geometry(tri)
        self.scalar = scalar_basis(degree)
        self.rt = rt_basis(degree)

        self.families = {
            "t": ElementFamily("dg-tensor-tracefree", degree),
            "u": ElementFamily("dg-vector", degree),
            "sig": ElementFamily("rt-tensor", degree),
            "phi": ElementFamily("dg-scalar", degree),
            "tt": ElementFamily("dg-vector", degree),
            "st": ElementFamily("rt-vector", degree),
        }
        self.dofmaps = {k: build_dofmap(f, tri) for k, f in self.families.items()}
        offset = 0
        self.offsets = {}
        for k in self.BLOCKS:
            self.offsets[k] = offset
            offset += self.dofmaps[k].n_dofs
        self.lam1 = offset
        self.lam2 = offset + 1
        self.n_dofs = offset + 2
        self.n_rt = self.dofmaps["st"].n_dofs

        self._volume_tabs = {}
        self.vol = self.tabulate_volume(self.vol_degree)
        self._edge_tab = None

    # -- tabulations ---------------------------------------------------

    def tabulate_volume(self, degree):
        if degree in self._volume_tabs:
            return self._volume_tabs[degree]
        rule = quadrature_rule(degree)
        ref = rule.xy
        qpoints = self.x0[:, None, :] + np.einsum("mab,qb->mqa", self.J, ref)
        qweights = self.detJ[:, None] * rule.weights[None, :]
        sv = self.scalar.eval(ref)
        sg = self.scalar.grad(ref)
        rtv_ref = self.rt.eval(ref)
        rtd_ref = self.rt.div(ref)
        signs = self.dofmaps["st"].cell_signs
        rtv = np.einsum("mab,qlb->mqla", self.J, rtv_ref) / self.detJ[:, None, None, None]
        rtv *= signs[:, None, :, None]
        rtd = rtd_ref[None, :, :] / self.detJ[:, None, None] * signs[:, None, :]
        tab = _VolumeTab(degree=degree, ref_points=ref, ref_weights=rule.weights,
                         qpoints=qpoints, qweights=qweights, sv=sv, sg=sg,
                         rtv=rtv, rtd=rtd)
        self._volume_tabs[degree] = tab
        return tab

    def tabulate_edges(self):
        """Reference basis values along the three local edges at the 1D
        Gauss points (owner orientation; reverse the point axis for the
        neighbor side)."""
        if self._edge_tab is not None:
            return self._edge_tab
        s1d, w1d = edge_rule(self.edge_degree)
        nq = len(s1d)
        sedge = np.empty((3, nq, self.scalar.dim))
        redge = np.empty((3, nq, self.rt.dim, 2))
        for i, (e0, e1) in enumerate(LOCAL_EDGES):
            A, B = REF_VERTICES[e0], REF_VERTICES[e1]
            pts = A[None, :] + s1d[:, None] * (B - A)[None, :]
            sedge[i] = self.scalar.eval(pts)
            redge[i] = self.rt.eval(pts)
        self._edge_tab = _EdgeTab(s1d=s1d, w1d=w1d, sedge=sedge, redge=redge)
        return self._edge_tab

    # -- field evaluation ----------------------------------------------

    def dg_scalar_at(self, coeffs, tab=None):
        tab = tab or self.vol
        return np.einsum("qk,mk->mq", tab.sv, coeffs.reshape(self.mesh.num_cells, -1))

    def dg_vector_at(self, coeffs, tab=None):
        tab = tab or self.vol
        c = coeffs.reshape(self.mesh.num_cells, 2, self.scalar.dim)
        return np.einsum("qk,mck->mqc", tab.sv, c)

    def dg_tensor_at(self, coeffs, tab=None):
        """Trace-free tensor field as (M, nq, 2, 2)."""
        tab = tab or self.vol
        c = coeffs.reshape(self.mesh.num_cells, 3, self.scalar.dim)
        f = np.einsum("qk,mak->mqa", tab.sv, c)
        return np.einsum("mqa,aij->mqij", f, TRACEFREE_BASIS)

    def rt_vector_at(self, coeffs, tab=None):
        tab = tab or self.vol
        local = coeffs[self.dofmaps["st"].cell_dofs]
        return (np.einsum("mqlc,ml->mqc", tab.rtv, local),
                np.einsum("mql,ml->mq", tab.rtd, local))

    def rt_tensor_at(self, coeffs, tab=None):
        """Tensor RT field and row-wise divergence: (M,nq,2,2), (M,nq,2)."""
        tab = tab or self.vol
        n = self.n_rt
        rows = []
        divs = []
        for r in range(2):
            v, d = self.rt_vector_at(coeffs[r * n:(r + 1) * n], tab)
            rows.append(v)
            divs.append(d)
        return np.stack(rows, axis=2), np.stack(divs, axis=2)

    def dg_scalar_grad_at(self, coeffs, tab=None):
        tab = tab or self.vol
        c = coeffs.reshape(self.mesh.num_cells, -1)
        g = np.einsum("qkb,mk->mqb", tab.sg, c)
        return np.einsum("mba,mqb->mqa", self.Jinv, g)

    def dg_vector_grad_at(self, coeffs, tab=None):
        """Broken gradient of a vector DG field: (M, nq, 2, 2), [c, d] = d v_c / d x_d."""
        tab = tab or self.vol
        c = coeffs.reshape(self.mesh.num_cells, 2, self.scalar.dim)
        g = np.einsum("qkb,mck->mqcb", tab.sg, c)
        return np.einsum("mba,mqcb->mqca", self.Jinv, g)


@dataclass
class _VolumeTab:
    degree: int
    ref_points: np.ndarray
    ref_weights: np.ndarray
    qpoints: np.ndarray
    qweights: np.ndarray
    sv: np.ndarray
    sg: np.ndarray
    rtv: np.ndarray
    rtd: np.ndarray


@dataclass
class _EdgeTab:
    s1d: np.ndarray
    w1d: np.ndarray
    sedge: np.ndarray
    redge: np.ndarray


def build_spaces(hierarchy, degree):
    return DiscreteSpaces(hierarchy, degree)


def interpolate(field, family, tri, dofmap=None):
    """Interpolate an analytic field into the given space.

    DG kinds use the cell-wise L2 projection; RT kinds match facet normal
    moments and interior moments. Reproduces fields already in the space
    to roundoff.
    """
    if dofmap is None:
        dofmap = build_dofmap(family, tri)
    degree = family.degree
    if family.kind in DG_KINDS:
        rule = quadrature_rule(min(10, max(4, 2 * degree + 2)))
        sb = scalar_basis(degree)
        pts = map_points(tri, rule.xy)
        sv = sb.eval(rule.xy)
        vals = np.asarray(field(pts))
        M = tri.num_cells
        if family.kind == "dg-scalar":
            comps = vals[:, :, None]
        elif family.kind == "dg-vector":
            comps = vals
        else:
            comps = np.stack([vals[..., 0, 0], vals[..., 0, 1], vals[..., 1, 0]],
                             axis=-1)
        coeff = np.einsum("q,qk,mqc->mck", rule.weights, sv, comps)
        return coeff.reshape(M, -1).ravel()

    basis = rt_basis(degree)
    if family.kind == "rt-tensor":
        fam_v = ElementFamily("rt-vector", degree)
        rows = [interpolate(lambda x, r=r: np.asarray(field(x))[..., r, :], fam_v, tri)
                for r in range(2)]
        return np.concatenate(rows)

    nf = degree + 1
    E = tri.num_facets
    M = tri.num_cells
    coeffs = np.zeros(dofmap.n_dofs)
    s1d, w1d = edge_rule(2 * degree + 2)
    pts, _ = facet_param_points(tri, np.arange(E), s1d)
    vn = np.einsum("fqc,fc->fq", np.asarray(field(pts)), tri.facet_normals)
    L = tri.facet_diameters
    for m in range(nf):
        P = shifted_legendre(m, s1d)
        coeffs[np.arange(E) * nf + m] = L * np.einsum("q,q,fq->f", w1d, P, vn)
    if basis.n_interior:
        rule = quadrature_rule(min(10, max(4, 2 * degree + 2)))
        J, Jinv, detJ, _ = cell_geometry(tri)
        pts = map_points(tri, rule.xy)
        vals = np.asarray(field(pts))
        vhat = detJ[:, None, None] * np.einsum("mab,mqb->mqa", Jinv, vals)
        mono = _mono_vals(basis.int_exps, rule.xy)
        nsi = len(basis.int_exps)
        # interior dof order is component-major: (c, k)
        coeff_int = np.einsum("q,qk,mqc->mck", rule.weights, mono, vhat)
        coeffs[E * nf:] = coeff_int.reshape(M, 2 * nsi).ravel()
    return coeffs
