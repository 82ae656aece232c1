"""Pressure recovery, error norms against exact solutions, and rates.

Errors use the norms natural to the formulation: L4 for velocity and
concentration, L2 for both gradient variables, and the div_{4/3} graph
norm for the two fluxes. The total error squares all six contributions.
"""

from dataclasses import dataclass

import numpy as np

from . import fem


class PostprocError(Exception):
    pass


SUPPORTED_EXPONENTS = (2.0, 4.0 / 3.0, 4.0)


@dataclass
class ErrorRecord:
    N: int
    h: float
    iterations: int = 0
    e_u: float | None = None
    e_t: float | None = None
    e_sig: float | None = None
    e_phi: float | None = None
    e_tt: float | None = None
    e_st: float | None = None
    e_p: float | None = None
    r_u: float | None = None
    r_t: float | None = None
    r_sig: float | None = None
    r_phi: float | None = None
    r_tt: float | None = None
    r_st: float | None = None
    r_p: float | None = None
    theta: float | None = None
    eff: float | None = None
    marked: int | None = None
    wall_time: float | None = None

    ERROR_KEYS = ("u", "t", "sig", "phi", "tt", "st", "p")

    def e_tot(self):
        parts = [self.e_u, self.e_t, self.e_sig, self.e_phi, self.e_tt, self.e_st]
        if any(p is None for p in parts):
            return None
        return float(np.sqrt(sum(p ** 2 for p in parts)))

    def set_rates_from(self, prev):
        if prev is None:
            return
        for key in self.ERROR_KEYS:
            e = getattr(self, f"e_{key}")
            e_prev = getattr(prev, f"e_{key}")
            if e is not None and e_prev is not None and e > 0 and e_prev > 0:
                setattr(self, f"r_{key}",
                        convergence_rate(e, e_prev, self.N, prev.N))


def pointwise_magnitude(values):
    """Euclidean / Frobenius magnitude over trailing tensor axes."""
    values = np.asarray(values)
    if values.ndim <= 2:
        return np.abs(values)
    axes = tuple(range(2, values.ndim))
    return np.sqrt(np.sum(values ** 2, axis=axes))


def lebesgue_norm(values, weights, r):
    """(sum w |v|^r)^(1/r) for r in {2, 4/3, 4}."""
    if not any(abs(r - s) < 1e-12 for s in SUPPORTED_EXPONENTS):
        raise PostprocError(f"unsupported Lebesgue exponent {r}")
    mag = pointwise_magnitude(values)
    return float(np.sum(weights * mag ** r) ** (1.0 / r))


def hdiv_norm(values, div_values, weights, r=4.0 / 3.0):
    """Graph norm: (||v||_0^2 + ||div v||_{0,r}^2)^(1/2)."""
    a = lebesgue_norm(values, weights, 2.0)
    b = lebesgue_norm(div_values, weights, r)
    return float(np.hypot(a, b))


@dataclass
class PressureField:
    """Postprocessed pressure in DG of degree 2*ell."""

    coeffs: np.ndarray
    degree: int
    mean: float
    c_uh: float


def recover_pressure(state, data, spaces):
    """p_h = -(1/2d) tr(2 sig_h + u_h x u_h) - c_{u_h}, projected into the
    piecewise polynomial space of doubled degree."""
    d = 2
    deg = 2 * spaces.degree
    tab = spaces.tabulate_volume(min(10, max(2 * deg, spaces.vol_degree)))
    u = spaces.dg_vector_at(state.u, tab)
    sig, _ = spaces.rt_tensor_at(state.sig, tab)
    usq = np.einsum("mqi,mqi->mq", u, u)
    area = float(spaces.mesh.cell_areas.sum())
    c_uh = -np.sum(tab.qweights * usq) / (2 * d * area)
    tr_term = 2.0 * (sig[:, :, 0, 0] + sig[:, :, 1, 1]) + usq
    p_vals = -tr_term / (2 * d) - c_uh
    sb = fem.scalar_basis(deg)
    sv = sb.eval(tab.ref_points)
    coeffs = np.einsum("q,qk,mq->mk", tab.ref_weights, sv, p_vals).ravel()
    mean = float(np.sum(tab.qweights * p_vals))
    return PressureField(coeffs=coeffs, degree=deg, mean=mean, c_uh=c_uh)


def evaluate_pressure(pressure, spaces, tab):
    sb = fem.scalar_basis(pressure.degree)
    sv = sb.eval(tab.ref_points)
    c = pressure.coeffs.reshape(spaces.mesh.num_cells, -1)
    return np.einsum("qk,mk->mq", sv, c)


def error_quadrature(spaces):
    return spaces.tabulate_volume(min(10, max(8, 2 * spaces.degree + 4)))


def compute_errors(state, exact, data, spaces, iterations=0):
    """ErrorRecord with the seven error norms at the given state."""
    tab = error_quadrature(spaces)
    W = tab.qweights
    X = tab.qpoints

    u_h = spaces.dg_vector_at(state.u, tab)
    t_h = spaces.dg_tensor_at(state.t, tab)
    sig_h, divsig_h = spaces.rt_tensor_at(state.sig, tab)
    phi_h = spaces.dg_scalar_at(state.phi, tab)
    tt_h = spaces.dg_vector_at(state.tt, tab)
    st_h, divst_h = spaces.rt_vector_at(state.st, tab)

    rec = ErrorRecord(N=spaces.n_dofs, h=float(spaces.mesh.cell_diameters.max()),
                      iterations=iterations)
    rec.e_u = lebesgue_norm(u_h - exact.u(X), W, 4.0)
    rec.e_t = lebesgue_norm(t_h - exact.t(X), W, 2.0)
    rec.e_sig = hdiv_norm(sig_h - exact.sigma(X),
                          divsig_h - exact.div_sigma(X), W)
    rec.e_phi = lebesgue_norm(phi_h - exact.phi(X), W, 4.0)
    rec.e_tt = lebesgue_norm(tt_h - exact.t_tilde(X), W, 2.0)
    rec.e_st = hdiv_norm(st_h - exact.sigma_tilde(X),
                         divst_h - exact.div_sigma_tilde(X), W)
    pressure = recover_pressure(state, data, spaces)
    p_h = evaluate_pressure(pressure, spaces, tab)
    rec.e_p = lebesgue_norm(p_h - exact.p(X), W, 2.0)
    return rec


def convergence_rate(e, e_prev, N, N_prev, d=2):
    """Experimental rate -d log(e/e') / log(N/N')."""
    if e <= 0 or e_prev <= 0 or N <= 0 or N_prev <= 0:
        raise PostprocError("rate needs positive errors and dof counts")
    if N == N_prev:
        raise PostprocError("rate needs distinct dof counts")
    return float(-d * np.log(e / e_prev) / np.log(N / N_prev))
