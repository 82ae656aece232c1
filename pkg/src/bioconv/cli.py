"""Batch front end: converge / adapt / solve / check.

Configuration is a flat key=value file plus command-line overrides
(later wins). Unknown keys are rejected. The --deterministic flag pins
the math libraries to one thread before numpy loads, so repeated runs
emit byte-identical CSV files.
"""

import argparse
import csv
import os
import sys
from dataclasses import dataclass, fields


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    problem: str = "example1"
    degree: int = 1
    mode: str = "uniform"        # uniform | adaptive | single-solve
    levels: int = 4
    initial_n: int = 0           # 0: use the problem's default
    dorfler_theta: float = 0.5
    marking: str = "dorfler"
    tol: float = 1e-7
    max_iter: int = 25
    solver_mode: str = "newton"
    dof_budget: int = 2_000_000
    tol_theta: float = 0.0
    warm_start: bool = True
    out: str = ""
    deterministic: bool = False

    def __post_init__(self):
        if self.degree < 1:
            raise ConfigError("degree must be at least 1")
        if self.levels < 1:
            raise ConfigError("levels must be at least 1")
        if self.mode not in ("uniform", "adaptive", "single-solve"):
            raise ConfigError(f"unknown mode {self.mode!r}")


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(key, raw):
    kind = _FIELD_TYPES[key]
    if kind is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"bad boolean for {key}: {raw!r}")
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    return raw


def parse_config(path=None, overrides=()):
    """Defaults, then the config file, then key=value overrides."""
    values = {}

    def absorb(key, raw, where):
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r} ({where})")
        values[key] = _parse_value(key, raw.strip())

    if path:
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"bad config line {lineno}: {line!r}")
                key, raw = line.split("=", 1)
                absorb(key, raw, f"{path}:{lineno}")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must be key=value: {item!r}")
        key, raw = item.split("=", 1)
        absorb(key, raw, "command line")
    return RunConfig(**values)


CSV_HEADER = ["N", "h", "e_u", "r_u", "e_t", "r_t", "e_sig", "r_sig",
              "e_phi", "r_phi", "e_tt", "r_tt", "e_st", "r_st", "e_p", "r_p",
              "theta", "eff", "it"]


def _fmt(value):
    return "" if value is None else f"{value:.5e}"


def write_csv(records, path):
    """One row per level in the fixed table schema."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for r in records:
            row = [str(r.N), _fmt(r.h)]
            for key in ("u", "t", "sig", "phi", "tt", "st", "p"):
                row.append(_fmt(getattr(r, f"e_{key}")))
                row.append(_fmt(getattr(r, f"r_{key}")))
            row.append(_fmt(r.theta))
            row.append(_fmt(r.eff))
            row.append(str(r.iterations))
            writer.writerow(row)


def _solver_config(config):
    from .solver import SolverConfig

    return SolverConfig(tol=config.tol, max_iter=config.max_iter,
                        mode=config.solver_mode)


def run_uniform(config):
    """Uniform-refinement convergence study: red-refine the macro mesh,
    solve, estimate and measure per level. Returns (records, all_converged)."""
    import numpy as np

    from . import estimator, fem, postproc
    from .forms import SystemState
    from .mesh import barycentric_refine, refine_uniform_red
    from .problems import get_problem
    from .solver import solve

    spec = get_problem(config.problem)
    if config.degree < spec.min_degree:
        raise ConfigError(f"{config.problem} needs degree >= {spec.min_degree}")
    macro = spec.macro_mesh(config.initial_n or spec.initial_n)
    records = []
    for level in range(config.levels):
        hier = barycentric_refine(macro)
        spaces = fem.build_spaces(hier, config.degree)
        state, report = solve(SystemState.zeros(spaces), spec.data, spaces,
                              _solver_config(config))
        if not report.converged:
            return records, False
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
        rec.set_rates_from(records[-1] if records else None)
        records.append(rec)
        if level + 1 < config.levels:
            macro = refine_uniform_red(macro)
    return records, True


def run_adaptive(config):
    from .adapt import AmrConfig, amr_loop
    from .problems import get_problem

    spec = get_problem(config.problem)
    amr = AmrConfig(dorfler_theta=config.dorfler_theta,
                    max_levels=config.levels, dof_budget=config.dof_budget,
                    tol_theta=config.tol_theta, marking=config.marking,
                    warm_start=config.warm_start)
    trace = amr_loop(spec, amr, degree=config.degree,
                     solver_config=_solver_config(config))
    return trace.records, not trace.aborted


def run_single(config):
    from . import estimator, fem, postproc
    from .forms import SystemState
    from .mesh import barycentric_refine
    from .problems import get_problem
    from .solver import solve

    spec = get_problem(config.problem)
    hier = barycentric_refine(spec.macro_mesh(config.initial_n
                                              or spec.initial_n))
    spaces = fem.build_spaces(hier, config.degree)
    state, report = solve(SystemState.zeros(spaces), spec.data, spaces,
                          _solver_config(config))
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
    return [rec], report.converged


def run_check():
    """Fast self-checks of the numerical building blocks."""
    import math

    import numpy as np

    results = []

    def record(name, ok):
        results.append((name, ok))
        print(f"[check] {name}: {'PASS' if ok else 'FAIL'}")

    from . import fem

    ok = True
    for degree in range(1, 11):
        rule = fem.quadrature_rule(degree)
        x, y = rule.xy.T
        for a in range(degree + 1):
            for b in range(degree + 1 - a):
                exact = (math.factorial(a) * math.factorial(b)
                         / math.factorial(a + b + 2))
                if abs(np.sum(rule.weights * x ** a * y ** b) - exact) > 1e-13 * exact:
                    ok = False
    record("quadrature exactness", ok)

    from . import forms, mesh, problems, solver
    from .estimator import local_indicators

    spec = problems.patch_constant()
    hier = mesh.barycentric_refine(spec.macro_mesh(1))
    spaces = fem.build_spaces(hier, 1)
    rng = np.random.default_rng(0)
    state = forms.SystemState.zeros(spaces)
    for name in ("t", "u", "sig", "phi", "tt", "st"):
        arr = getattr(state, name)
        arr[:] = 0.3 * rng.standard_normal(arr.shape)
    x = state.pack(spaces)
    system = forms.assemble_jacobian(state, spec.data, spaces)
    delta = rng.standard_normal(spaces.n_dofs)
    delta /= np.linalg.norm(delta)
    eps = 1e-6
    rp = forms.assemble_residual(forms.SystemState.unpack(x + eps * delta,
                                                          spaces),
                                 spec.data, spaces)
    rm = forms.assemble_residual(forms.SystemState.unpack(x - eps * delta,
                                                          spaces),
                                 spec.data, spaces)
    jd = system.jacobian @ delta
    err = np.linalg.norm((rp - rm) / (2 * eps) - jd) / np.linalg.norm(jd)
    record("jacobian finite differences", err <= 1e-6)

    cfg = solver.SolverConfig(tol=1e-12)
    sol, rep = solver.solve(forms.SystemState.zeros(spaces), spec.data, spaces,
                            cfg)
    exact_state = forms.interpolate_state(spec.exact, spaces)
    diff = np.abs(sol.pack(spaces) - exact_state.pack(spaces)).max()
    record("patch test solve", rep.converged and diff < 1e-9)
    fld = local_indicators(sol, spec.data, spaces)
    record("patch test estimator", fld.theta_global < 1e-8)

    from .adapt import dorfler_mark

    marked = dorfler_mark([4.0, 3.0, 2.0, 1.0], 0.5)
    record("dorfler marking", marked.tolist() == [0, 1])

    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        tri = mesh.build_lshape(1)
        path = os.path.join(tmp, "round.msh")
        mesh.save_msh(tri, path)
        tri2 = mesh.load_msh(path)
        record("msh roundtrip", tri2.num_cells == tri.num_cells
               and abs(tri2.cell_areas.sum() - tri.cell_areas.sum()) < 1e-14)

    return all(ok for _, ok in results)


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="bioconv",
        description="Adaptive fully mixed solver for stationary bioconvection")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb, blurb in (("converge", "uniform-refinement convergence study"),
                        ("adapt", "adaptive solve-estimate-mark-refine run"),
                        ("solve", "single solve on the initial mesh"),
                        ("check", "run the built-in property checks")):
        p = sub.add_parser(verb, help=blurb)
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--out", default=None, help="CSV output path")
        p.add_argument("--deterministic", action="store_true",
                       help="single-threaded, byte-reproducible run")
        p.add_argument("overrides", nargs="*", metavar="key=value")
    args = parser.parse_args(argv)

    if args.deterministic:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ[var] = "1"

    if args.verb == "check":
        return 0 if run_check() else 1

    try:
        config = parse_config(args.config, args.overrides)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.out:
        config.out = args.out
    if args.deterministic:
        config.deterministic = True
    config.mode = {"converge": "uniform", "adapt": "adaptive",
                   "solve": "single-solve"}[args.verb]

    try:
        if config.mode == "uniform":
            records, ok = run_uniform(config)
        elif config.mode == "adaptive":
            records, ok = run_adaptive(config)
        else:
            records, ok = run_single(config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    for rec in records:
        eff = f"{rec.eff:.3f}" if rec.eff is not None else "-"
        theta = f"{rec.theta:.3e}" if rec.theta is not None else "-"
        print(f"N={rec.N:8d} h={rec.h:.4f} theta={theta} eff={eff} "
              f"it={rec.iterations}")
    if config.out:
        write_csv(records, config.out)
        print(f"wrote {config.out}")
    if not ok:
        print("warning: a level did not converge; table is partial",
              file=sys.stderr)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
