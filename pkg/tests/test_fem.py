import math

import numpy as np
import pytest

from bioconv import fem, mesh


def tri_monomial_integral(a, b):
    """Exact integral of x^a y^b over the reference triangle."""
    return math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)


class TestQuadrature:
    def test_area(self):
        rule = fem.quadrature_rule(4)
        assert rule.weights.sum() == pytest.approx(0.5, rel=1e-14)

    def test_linear(self):
        rule = fem.quadrature_rule(2)
        x, y = rule.xy.T
        assert np.sum(rule.weights * (x + y)) == pytest.approx(1 / 3, rel=1e-14)

    def test_x2y2(self):
        rule = fem.quadrature_rule(4)
        x, y = rule.xy.T
        val = np.sum(rule.weights * x ** 2 * y ** 2)
        assert val == pytest.approx(tri_monomial_integral(2, 2), rel=1e-13)
        assert tri_monomial_integral(2, 2) == pytest.approx(1 / 180)

    @pytest.mark.parametrize("degree", range(1, 11))
    def test_exactness_all_monomials(self, degree):
        rule = fem.quadrature_rule(degree)
        x, y = rule.xy.T
        for a in range(degree + 1):
            for b in range(degree + 1 - a):
                val = np.sum(rule.weights * x ** a * y ** b)
                exact = tri_monomial_integral(a, b)
                assert abs(val - exact) <= 1e-13 * abs(exact)

    def test_positive_weights(self):
        for degree in range(1, 11):
            assert (fem.quadrature_rule(degree).weights > 0).all()

    def test_symmetric_point_set(self):
        rule = fem.quadrature_rule(5)
        pts = rule.points
        for perm in [(1, 0, 2), (0, 2, 1), (2, 1, 0), (1, 2, 0), (2, 0, 1)]:
            permuted = pts[:, perm]
            a = np.lexsort(pts.T)
            b = np.lexsort(permuted.T)
            assert np.allclose(pts[a], permuted[b], atol=1e-12)

    def test_degree_range(self):
        with pytest.raises(fem.FemError):
            fem.quadrature_rule(0)
        with pytest.raises(fem.FemError):
            fem.quadrature_rule(11)


class TestDgBasis:
    def test_scalar_mode_count_and_constant(self):
        sb = fem.scalar_basis(1)
        assert sb.dim == 3
        tri = mesh.build_rectangle(0, 0, 1, 1, 1, 1)
        fam = fem.ElementFamily("dg-scalar", 1)
        coeffs = fem.interpolate(lambda x: np.full(x.shape[:-1], 2.5), fam, tri)
        pts = np.array([[0.1, 0.2], [0.3, 0.3], [0.5, 0.1]])
        vals, _ = fem.eval_dg_basis(fam, tri, 0, pts)
        f = vals @ coeffs[:3]
        assert np.allclose(f, 2.5, atol=1e-13)

    def test_tracefree_tensor_basis(self):
        tri = mesh.build_rectangle(0, 0, 1, 1, 1, 1)
        fam = fem.ElementFamily("dg-tensor-tracefree", 1)
        pts = fem.quadrature_rule(4).xy
        vals, _ = fem.eval_dg_basis(fam, tri, 0, pts)
        trace = vals[..., 0, 0] + vals[..., 1, 1]
        assert np.abs(trace).max() < 1e-14

    def test_linear_reproduction_at_barycenter(self):
        tri = mesh.build_rectangle(-1, -1, 1, 1, 2, 2)
        fam = fem.ElementFamily("dg-scalar", 1)
        coeffs = fem.interpolate(lambda x: x[..., 0], fam, tri)
        bary = np.array([[1 / 3, 1 / 3]])
        for cell in range(tri.num_cells):
            vals, _ = fem.eval_dg_basis(fam, tri, cell, bary)
            got = (vals @ coeffs[cell * 3:(cell + 1) * 3])[0]
            expect = tri.vertices[tri.cells[cell]].mean(axis=0)[0]
            assert got == pytest.approx(expect, abs=1e-13)


class TestRtBasis:
    def test_rt0_nodal_property(self):
        basis = fem.rt_basis(0)
        assert basis.dim == 3
        s1d, w1d = fem.edge_rule(4)
        for j, (e0, e1) in enumerate(fem.LOCAL_EDGES):
            A, B = fem.REF_VERTICES[e0], fem.REF_VERTICES[e1]
            d = B - A
            length = np.linalg.norm(d)
            n = np.array([d[1], -d[0]]) / length
            pts = A[None] + s1d[:, None] * d[None]
            vals = basis.eval(pts)
            for i in range(3):
                moment = length * np.sum(w1d * (vals[:, i] @ n))
                assert moment == pytest.approx(1.0 if i == j else 0.0, abs=1e-13)

    def test_rt1_div_is_p1(self):
        basis = fem.rt_basis(1)
        rule = fem.quadrature_rule(6)
        div = basis.div(rule.xy)
        sb = fem.scalar_basis(1)
        sv = sb.eval(rule.xy)
        # project each divergence onto P1 and compare pointwise
        proj = sv @ np.einsum("q,qk,ql->kl", rule.weights, sv, div)
        assert np.abs(proj - div).max() < 1e-13

    def test_divergence_theorem_on_interpolant(self):
        tri = mesh.build_rectangle(-1, -1, 1, 1, 1, 1)
        fam = fem.ElementFamily("rt-vector", 1)
        coeffs = fem.interpolate(lambda x: x, fam, tri)
        dm = fem.build_dofmap(fam, tri)
        rule = fem.quadrature_rule(4)
        _, Jinv, detJ, _ = fem.cell_geometry(tri)
        s1d, w1d = fem.edge_rule(6)
        for cell in range(tri.num_cells):
            vals, divs = fem.eval_rt_basis(fam, tri, cell, rule.xy)
            local = coeffs[dm.cell_dofs[cell]] * dm.cell_signs[cell]
            div_int = np.sum(rule.weights * detJ[cell] * (divs @ local))
            # oracle: boundary flux of the position field
            flux = 0.0
            for f in tri.cell_facets[cell]:
                pts, _ = fem.facet_param_points(tri, np.array([f]), s1d)
                n = tri.facet_normals[f]
                sign = 1.0 if tri.facet_cells[f, 0] == cell else -1.0
                flux += sign * tri.facet_diameters[f] * np.sum(
                    w1d * (pts[0] @ n))
            assert div_int == pytest.approx(flux, rel=1e-12)
            assert div_int == pytest.approx(2 * tri.cell_areas[cell], rel=1e-12)

    def test_piola_div_consistency(self):
        # physical divergence through the gradient route equals
        # (1/detJ) * reference divergence
        tri = mesh.build_rectangle(0, 0, 2, 1, 2, 1)
        basis = fem.rt_basis(1)
        rule = fem.quadrature_rule(4)
        J, Jinv, detJ, _ = fem.cell_geometry(tri)
        ref_grad = basis.grad(rule.xy)  # (q, l, c, d): d ref-psi_c / d ref-x_d
        ref_div = basis.div(rule.xy)
        for cell in range(tri.num_cells):
            # grad_x v = (1/detJ) J gradhat(vhat) Jinv
            g = np.einsum("ab,qlbc,cd->qlad", J[cell], ref_grad, Jinv[cell])
            div_phys = (g[:, :, 0, 0] + g[:, :, 1, 1]) / detJ[cell]
            assert np.abs(div_phys - ref_div / detJ[cell]).max() < 1e-13


class TestDofMap:
    def test_dg_count(self):
        tri = mesh.barycentric_refine(mesh.build_rectangle(0, 0, 1, 1, 1, 1)).bary
        assert tri.num_cells == 6
        dm = fem.build_dofmap(fem.ElementFamily("dg-scalar", 1), tri)
        assert dm.n_dofs == 18

    def test_rt_count_two_cells(self):
        tri = mesh.build_rectangle(0, 0, 1, 1, 1, 1)
        assert tri.num_facets == 5
        dm = fem.build_dofmap(fem.ElementFamily("rt-vector", 1), tri)
        assert dm.n_dofs == 5 * 2 + 2 * 2

    def test_shared_facet_dofs(self):
        tri = mesh.build_rectangle(0, 0, 1, 1, 2, 2)
        for ell in (1, 2):
            dm = fem.build_dofmap(fem.ElementFamily("rt-vector", ell), tri)
            for f in tri.interior_facets:
                c0, c1 = tri.facet_cells[f]
                shared = set(dm.cell_dofs[c0]) & set(dm.cell_dofs[c1])
                assert shared == set(dm.facet_dofs[f])
                assert len(shared) == ell + 1


class TestInterpolation:
    def test_constant_dg(self):
        tri = mesh.build_rectangle(0, 0, 1, 1, 2, 2)
        fam = fem.ElementFamily("dg-vector", 1)
        coeffs = fem.interpolate(
            lambda x: np.broadcast_to([1.5, -2.0], x.shape), fam, tri)
        pts = np.array([[0.25, 0.25], [0.1, 0.7]])
        vals, _ = fem.eval_dg_basis(fam, tri, 1, pts)
        nloc = vals.shape[1]
        f = np.einsum("qlc,l->qc", vals, coeffs[nloc:2 * nloc])
        assert np.allclose(f, [1.5, -2.0], atol=1e-13)

    def test_divergence_free_field_rt(self):
        tri = mesh.barycentric_refine(mesh.build_rectangle(-1, -1, 1, 1, 2, 2)).bary
        fam = fem.ElementFamily("rt-vector", 1)
        coeffs = fem.interpolate(
            lambda x: np.stack([x[..., 1], -x[..., 0]], axis=-1), fam, tri)
        dm = fem.build_dofmap(fam, tri)
        rule = fem.quadrature_rule(4)
        for cell in range(0, tri.num_cells, 5):
            _, divs = fem.eval_rt_basis(fam, tri, cell, rule.xy)
            local = coeffs[dm.cell_dofs[cell]] * dm.cell_signs[cell]
            assert np.abs(divs @ local).max() < 1e-12

    def test_rt_roundtrip_reproduction(self):
        tri = mesh.build_rectangle(0, 0, 1, 1, 2, 2)
        fam = fem.ElementFamily("rt-vector", 1)
        dm = fem.build_dofmap(fam, tri)
        rng = np.random.default_rng(11)
        coeffs = rng.standard_normal(dm.n_dofs)
        hier = mesh.barycentric_refine(mesh.build_rectangle(0, 0, 1, 1, 2, 2))

        def field(x):
            # evaluate the RT function by locating each point's cell
            x = np.asarray(x)
            flat = x.reshape(-1, 2)
            out = np.zeros_like(flat)
            J, Jinv, detJ, x0 = fem.cell_geometry(tri)
            for k, p in enumerate(flat):
                for cell in range(tri.num_cells):
                    ref = Jinv[cell] @ (p - x0[cell])
                    if ref.min() > -1e-12 and ref.sum() < 1 + 1e-12:
                        vals, _ = fem.eval_rt_basis(fam, tri, cell, ref[None])
                        local = coeffs[dm.cell_dofs[cell]] * dm.cell_signs[cell]
                        out[k] = np.einsum("lc,l->c", vals[0], local)
                        break
            return out.reshape(x.shape)

        back = fem.interpolate(field, fam, tri)
        assert np.abs(back - coeffs).max() < 1e-10 * max(1, np.abs(coeffs).max())

    def test_dg_l2_convergence_ratio(self):
        fam = fem.ElementFamily("dg-scalar", 1)
        errs = []
        for n in (4, 8):
            tri = mesh.build_rectangle(-1, -1, 1, 1, n, n)
            coeffs = fem.interpolate(lambda x: np.sin(np.pi * x[..., 0]), fam, tri)
            rule = fem.quadrature_rule(8)
            pts = fem.map_points(tri, rule.xy)
            sv = fem.scalar_basis(1).eval(rule.xy)
            fh = np.einsum("qk,mk->mq", sv, coeffs.reshape(tri.num_cells, -1))
            fex = np.sin(np.pi * pts[..., 0])
            _, _, detJ, _ = fem.cell_geometry(tri)
            w = detJ[:, None] * rule.weights[None, :]
            errs.append(np.sqrt(np.sum(w * (fh - fex) ** 2)))
        assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.15)


class TestConformity:
    @pytest.mark.parametrize("ell", [1, 2])
    def test_normal_trace_continuity(self, ell):
        tri = mesh.barycentric_refine(mesh.build_lshape(1)).bary
        fam = fem.ElementFamily("rt-vector", ell)
        dm = fem.build_dofmap(fam, tri)
        rng = np.random.default_rng(5)
        coeffs = rng.standard_normal(dm.n_dofs)
        s1d = np.linspace(0.15, 0.85, ell + 1)
        for f in tri.interior_facets:
            owner, nb = tri.facet_cells[f]
            pts, _ = fem.facet_param_points(tri, np.array([f]), s1d)
            n = tri.facet_normals[f]
            traces = []
            J, Jinv, detJ, x0 = fem.cell_geometry(tri)
            for cell in (owner, nb):
                ref = np.einsum("ab,qb->qa", Jinv[cell], pts[0] - x0[cell])
                vals, _ = fem.eval_rt_basis(fam, tri, cell, ref)
                local = coeffs[dm.cell_dofs[cell]] * dm.cell_signs[cell]
                traces.append(np.einsum("qlc,l,c->q", vals, local, n))
            jump = np.abs(traces[0] - traces[1]).max()
            assert jump <= 1e-10 * np.abs(coeffs).max()


class TestSpaces:
    def test_dof_totals_match_reference_counts(self):
        # closed-form dof accounting for the coupled spaces on the unit
        # family: N = 962 (ell=1) and 1946 (ell=2) on the 2x2 square grid
        hier = mesh.barycentric_refine(mesh.build_rectangle(-1, -1, 1, 1, 2, 2))
        assert fem.build_spaces(hier, 1).n_dofs == 962
        assert fem.build_spaces(hier, 2).n_dofs == 1946

    def test_block_layout(self):
        hier = mesh.barycentric_refine(mesh.build_rectangle(0, 0, 1, 1, 1, 1))
        sp = fem.build_spaces(hier, 1)
        total = sum(sp.dofmaps[k].n_dofs for k in sp.BLOCKS)
        assert sp.n_dofs == total + 2
        assert sp.lam2 == sp.n_dofs - 1

    def test_degree_guard(self):
        hier = mesh.barycentric_refine(mesh.build_rectangle(0, 0, 1, 1, 1, 1))
        with pytest.raises(fem.FemError):
            fem.build_spaces(hier, 0)
