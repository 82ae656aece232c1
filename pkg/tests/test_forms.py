import numpy as np
import pytest

from bioconv import fem, forms, mesh, problems


def small_spaces(degree=1, n=1):
    hier = mesh.barycentric_refine(mesh.build_rectangle(-1, -1, 1, 1, n, n))
    return fem.build_spaces(hier, degree)


def zero_data(**overrides):
    base = dict(
        mu=lambda s: np.ones_like(np.asarray(s, dtype=float)),
        dmu=lambda s: np.zeros_like(np.asarray(s, dtype=float)),
        kappa=1.0, g=0.0, gamma=0.0, alpha=0.0, U=0.0,
        f=lambda x: np.zeros(x.shape[:-1] + (2,)),
        u_dirichlet=lambda x: np.zeros(x.shape[:-1] + (2,)))
    base.update(overrides)
    return forms.ModelData(**base)


def random_state(spaces, rng, scale=0.3):
    st = forms.SystemState.zeros(spaces)
    for name in ("t", "u", "sig", "phi", "tt", "st"):
        arr = getattr(st, name)
        arr[:] = scale * rng.standard_normal(arr.shape)
    st.lam_trsigma = scale * rng.standard_normal()
    st.lam_phimean = scale * rng.standard_normal()
    return st


class TestViscosityProfiles:
    def test_exp_decay(self):
        mu, dmu = forms.eval_viscosity_profile("exp-decay")
        assert mu(0.0) == pytest.approx(1.0)
        assert dmu(0.0) == pytest.approx(-1.0)

    def test_constant(self):
        mu, dmu = forms.eval_viscosity_profile("constant(0.01)")
        s = np.linspace(-3, 3, 11)
        assert np.allclose(mu(s), 0.01)
        assert np.allclose(dmu(s), 0.0)

    def test_fd_consistency(self):
        rng = np.random.default_rng(2)
        pts = rng.uniform(-2, 2, 100)
        h = 1e-6
        for name in ("exp-decay", "constant(0.37)"):
            mu, dmu = forms.eval_viscosity_profile(name)
            fd = (mu(pts + h) - mu(pts - h)) / (2 * h)
            assert np.abs(fd - dmu(pts)).max() < 1e-8

    def test_unknown(self):
        with pytest.raises(forms.ModelError):
            forms.eval_viscosity_profile("bogus")


class TestResidual:
    def test_zero_state_zero_data(self):
        spaces = small_spaces()
        state = forms.SystemState.zeros(spaces)
        res = forms.assemble_residual(state, zero_data(), spaces)
        assert np.abs(res).max() == 0.0

    def test_patch_constant_interpolant(self):
        spec = problems.patch_constant()
        hier = mesh.barycentric_refine(spec.macro_mesh(2))
        spaces = fem.build_spaces(hier, 1)
        state = forms.interpolate_state(spec.exact, spaces)
        res = forms.assemble_residual(state, spec.data, spaces)
        assert np.abs(res).max() < 1e-9

    def test_patch_rotation_interpolant_degree2(self):
        spec = problems.patch_rotation()
        hier = mesh.barycentric_refine(spec.macro_mesh(2))
        spaces = fem.build_spaces(hier, 2)
        state = forms.interpolate_state(spec.exact, spaces)
        res = forms.assemble_residual(state, spec.data, spaces)
        assert np.abs(res).max() < 1e-9

    def test_b_row_integration_by_parts(self):
        # t = grad v, u = v for linear divergence-free v makes the sig rows
        # vanish against the weak Dirichlet term with u_D = v
        spaces = small_spaces(degree=1, n=2)
        A = np.array([[0.3, -0.8], [1.1, -0.3]])
        b = np.array([0.2, -0.5])
        v = lambda x: x @ A.T + b
        gv = lambda x: np.broadcast_to(A, x.shape[:-1] + (2, 2)).copy()
        state = forms.SystemState.zeros(spaces)
        state.t = fem.interpolate(gv, spaces.families["t"], spaces.mesh)
        state.u = fem.interpolate(v, spaces.families["u"], spaces.mesh)
        data = zero_data(u_dirichlet=v)
        res = forms.assemble_residual(state, data, spaces, apply_essential=False)
        block = res[spaces.offsets["sig"]:spaces.offsets["sig"]
                    + spaces.dofmaps["sig"].n_dofs]
        assert np.abs(block).max() < 1e-12
        # trace constraint row integrates tr(A) minus nothing
        assert res[spaces.lam1] == pytest.approx(0.0, abs=1e-12)

    def test_viscosity_positivity_enforced(self):
        spaces = small_spaces()
        state = forms.SystemState.zeros(spaces)
        state.phi[:] = 0.0
        data = zero_data(mu=lambda s: -np.ones_like(np.asarray(s)))
        with pytest.raises(forms.ModelError):
            forms.assemble_residual(state, data, spaces)


class TestSkewSymmetry:
    def test_convective_forms_vanish_on_diagonal(self):
        spec = problems.example1_square()
        hier = mesh.barycentric_refine(spec.macro_mesh(2))
        spaces = fem.build_spaces(hier, 1)
        rng = np.random.default_rng(3)
        for _ in range(5):
            w = rng.standard_normal(spaces.dofmaps["u"].n_dofs)
            vt = rng.standard_normal(spaces.dofmaps["t"].n_dofs)
            vu = rng.standard_normal(spaces.dofmaps["u"].n_dofs)
            val, scale = forms.convection_value(spaces, w, (vt, vu), (vt, vu))
            assert abs(val) <= 1e-12 * max(scale, 1.0)
            pt = rng.standard_normal(spaces.dofmaps["tt"].n_dofs)
            pp = rng.standard_normal(spaces.dofmaps["phi"].n_dofs)
            val, scale = forms.convection_tilde_value(spaces, w, (pt, pp), (pt, pp))
            assert abs(val) <= 1e-12 * max(scale, 1.0)


class TestJacobian:
    @pytest.mark.parametrize("profile", ["exp-decay", "constant(0.8)"])
    def test_forward_fd(self, profile):
        spec = problems.example1_square()
        hier = mesh.barycentric_refine(spec.macro_mesh(1))
        spaces = fem.build_spaces(hier, 1)
        mu, dmu = forms.eval_viscosity_profile(profile)
        data = spec.data
        data = forms.ModelData(
            mu=mu, dmu=dmu, kappa=data.kappa, g=data.g, gamma=data.gamma,
            alpha=data.alpha, U=data.U, f=data.f, u_dirichlet=data.u_dirichlet,
            grad_u_dirichlet=data.grad_u_dirichlet,
            sigtilde_normal=data.sigtilde_normal, conc_source=data.conc_source,
            phi_mean=data.phi_mean, trsigma_mean=data.trsigma_mean)
        rng = np.random.default_rng(7)
        state = random_state(spaces, rng)
        x = state.pack(spaces)
        system = forms.assemble_jacobian(state, data, spaces)
        delta = rng.standard_normal(spaces.n_dofs)
        delta /= np.linalg.norm(delta)
        eps = 1e-7
        xp = x + eps * delta
        rp = forms.assemble_residual(forms.SystemState.unpack(xp, spaces),
                                     data, spaces)
        jd = system.jacobian @ delta
        fd = (rp - system.residual) / eps
        assert np.linalg.norm(fd - jd) / np.linalg.norm(jd) <= 1e-6

    def test_central_fd_tight(self):
        spec = problems.patch_constant()
        hier = mesh.barycentric_refine(spec.macro_mesh(1))
        spaces = fem.build_spaces(hier, 1)
        rng = np.random.default_rng(17)
        state = random_state(spaces, rng)
        x = state.pack(spaces)
        system = forms.assemble_jacobian(state, spec.data, spaces)
        delta = rng.standard_normal(spaces.n_dofs)
        delta /= np.linalg.norm(delta)
        eps = 1e-6
        rp = forms.assemble_residual(
            forms.SystemState.unpack(x + eps * delta, spaces), spec.data, spaces)
        rm = forms.assemble_residual(
            forms.SystemState.unpack(x - eps * delta, spaces), spec.data, spaces)
        jd = system.jacobian @ delta
        fd = (rp - rm) / (2 * eps)
        assert np.linalg.norm(fd - jd) / np.linalg.norm(jd) <= 1e-8

    def test_tt_block_state_independent_for_constant_mu(self):
        spaces = small_spaces()
        data = zero_data()
        rng = np.random.default_rng(5)
        blocks = []
        for _ in range(2):
            state = random_state(spaces, rng)
            J = forms.assemble_jacobian(state, data, spaces).jacobian
            sl = slice(spaces.offsets["t"],
                       spaces.offsets["t"] + spaces.dofmaps["t"].n_dofs)
            blocks.append(J[sl, sl].toarray())
        assert np.abs(blocks[0] - blocks[1]).max() < 1e-13

    def test_constraint_coupling_symmetric(self):
        spaces = small_spaces()
        data = zero_data()
        state = forms.SystemState.zeros(spaces)
        J = forms.assemble_jacobian(state, data, spaces).jacobian.toarray()
        sig0 = spaces.offsets["sig"]
        nsig = spaces.dofmaps["sig"].n_dofs
        col = J[sig0:sig0 + nsig, spaces.lam1]
        row = J[spaces.lam1, sig0:sig0 + nsig]
        assert np.allclose(col, row, atol=1e-14)
        assert np.abs(col).max() > 0

    def test_picard_differs_only_in_state_terms(self):
        spec = problems.example1_square()
        hier = mesh.barycentric_refine(spec.macro_mesh(1))
        spaces = fem.build_spaces(hier, 1)
        state = forms.SystemState.zeros(spaces)
        Jn = forms.assemble_jacobian(state, spec.data, spaces, mode="newton")
        Jp = forms.assemble_jacobian(state, spec.data, spaces, mode="picard")
        # at the zero state the two linearizations differ only in the
        # buoyancy coupling g*gamma (u row, phi column)
        D = (Jn.jacobian - Jp.jacobian).tocoo()
        u0 = spaces.offsets["u"]
        phi0 = spaces.offsets["phi"]
        nz = np.abs(D.data) > 1e-14
        assert np.all((D.row[nz] >= u0) & (D.row[nz] < u0 + spaces.dofmaps["u"].n_dofs))
        assert np.all((D.col[nz] >= phi0)
                      & (D.col[nz] < phi0 + spaces.dofmaps["phi"].n_dofs))


class TestEssentialData:
    def test_zero_flux_fixes_boundary_dofs(self):
        spaces = small_spaces(n=2)
        data = zero_data()
        idx, vals = forms.apply_sigtilde_normal_data(spaces, data)
        tri = spaces.mesh
        nf = spaces.degree + 1
        assert idx.size == len(tri.boundary_facets) * nf
        assert np.all(vals == 0.0)

    def test_interior_dofs_never_fixed(self):
        spaces = small_spaces(n=2)
        idx, _ = forms.apply_sigtilde_normal_data(spaces, zero_data())
        tri = spaces.mesh
        dm = spaces.dofmaps["st"]
        interior = set()
        for f in tri.interior_facets:
            interior.update((spaces.offsets["st"] + dm.facet_dofs[f]).tolist())
        assert not interior & set(idx.tolist())

    def test_manufactured_flux_matches_interpolant(self):
        spec = problems.example1_square()
        hier = mesh.barycentric_refine(spec.macro_mesh(2))
        spaces = fem.build_spaces(hier, 1)
        idx, vals = forms.apply_sigtilde_normal_data(spaces, spec.data)
        coeffs = fem.interpolate(spec.exact.sigma_tilde, spaces.families["st"],
                                 spaces.mesh, spaces.dofmaps["st"])
        got = np.concatenate([coeffs])[idx - spaces.offsets["st"]]
        assert np.abs(got - vals).max() < 1e-12 * max(1, np.abs(vals).max())
