"""Command line entry point.

Every subcommand writes a ``manifest.json`` next to its CSV output and exits
with a status that identifies the failure class (see ``nncns --help``).
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid

from . import constitutive as cst
from . import errors
from . import fixedpoint as fp
from . import oracle as orc
from . import symbol as sym
from .config import RunConfig, parse_config, serialize
from .fields import (Field, Grid, NormSpec, TimeSeries, gauge, read_snapshot, sobolev_norm, write_csv,
                     write_snapshot)

log = logging.getLogger("nncns")

EXIT_CODES = [
    (0, "all verdicts passed"),
    (1, "unexpected internal error"),
    (2, "invalid configuration or arguments"),
    (10, "other solver failure"),
    (11, "constitutive argument outside the model range"),
    (12, "ellipticity constant not positive"),
    (13, "flow map violates the sigma condition"),
    (14, "iteration did not converge"),
    (15, "Richardson iteration did not contract"),
    (16, "singular resolvent symbol"),
    (17, "non-positive density"),
    (18, "explicit march became unstable"),
    (19, "singular flow-map Jacobian"),
    (20, "a verification verdict failed"),
]


def _version():
    try:
        return metadata.version("nncns")
    except metadata.PackageNotFoundError:
        return "0.1.0"


class Run:
    """Output directory, verdict list and manifest for one subcommand."""

    def __init__(self, command: str, out: Path, cfg: RunConfig | None):
        self.command = command
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.cfg = cfg
        self.verdicts = []
        self.telemetry = {}
        self.start = time.perf_counter()

    def verdict(self, name: str, passed: bool, detail: str = ""):
        passed = bool(passed)
        self.verdicts.append({"check": name, "passed": passed, "detail": detail})
        print(f"{'PASS' if passed else 'FAIL'} {name} {detail}".rstrip())

    def csv(self, name, header, rows):
        if self.cfg is None or self.cfg.output.csv:
            write_csv(self.out / name, header, rows)

    def finish(self, error: Exception | None = None) -> int:
        manifest = {
            "command": self.command,
            "version": _version(),
            "config_hash": self.cfg.digest() if self.cfg else None,
            "wall_clock_s": time.perf_counter() - self.start,
            "telemetry": self.telemetry,
            "verdicts": self.verdicts,
            "error": None if error is None else {"type": type(error).__name__, "message": str(error)},
        }
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=float) + "\n")
        if error is not None:
            return getattr(error, "exit_code", 10)
        return 0 if all(v["passed"] for v in self.verdicts) else errors.VerdictFailure.exit_code


def _load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    return parse_config(Path(path).read_text())


def _setup(cfg: RunConfig) -> fp.ProblemSetup:
    rho0, u0 = cfg.initial_data()
    p = cfg.problem
    return fp.ProblemSetup(cfg.grid(), cfg.viscosity(), cfg.pressure_law(), rho0, u0, T=p.T, n_t=p.n_t,
                           p=p.p, q=p.q, sigma=cfg.solver.sigma, tol_linear=cfg.solver.linear_tol)


def save_trajectory(out: Path, grid: Grid, rho: TimeSeries, u: TimeSeries, every: int = 1):
    """Write ``rho_XXXX.nncf`` and ``u_XXXX.nncf`` snapshots for every ``every``-th sample."""
    out.mkdir(parents=True, exist_ok=True)
    idx = list(range(0, len(rho), max(1, every)))
    if idx[-1] != len(rho) - 1:
        idx.append(len(rho) - 1)
    for n in idx:
        t = float(rho.times[n])
        write_snapshot(out / f"rho_{n:04d}.nncf", Field(grid, rho.values[n], 0, t))
        write_snapshot(out / f"u_{n:04d}.nncf", Field(grid, u.values[n], 1, t))


def load_trajectory(path: Path):
    path = Path(path)
    if (path / "trajectory").is_dir():
        path = path / "trajectory"
    rf = sorted(path.glob("rho_*.nncf"))
    uf = sorted(path.glob("u_*.nncf"))
    if not rf or len(rf) != len(uf):
        raise errors.ConfigError(f"{path}: no matching rho_/u_ snapshots")
    rs = [read_snapshot(f) for f in rf]
    us = [read_snapshot(f) for f in uf]
    times = np.array([f.time for f in rs])
    grid = rs[0].grid
    return grid, TimeSeries(times, np.stack([f.phys for f in rs])), TimeSeries(times, np.stack([f.phys for f in us]))


def _l2qt(grid, series_values, times):
    vals = [grid.lq_norm(v, 2) ** 2 for v in series_values]
    return float(np.sqrt(trapezoid(vals, times))) if len(times) > 1 else float(np.sqrt(vals[0]))


def _norm_rows(grid, rho, u):
    mass = grid.integrate(rho.values)
    for n, t in enumerate(rho.times):
        yield [float(t), float(mass[n]), grid.lq_norm(rho.values[n] - rho.values[n].mean(), 2),
               grid.lq_norm(u.values[n], 2)]


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args, run: Run):
    cfg = run.cfg
    setup = _setup(cfg)
    sol = fp.solve_nonlinear(setup, cfg.solver.tol, cfg.solver.max_iter, cfg.solver.max_halvings)
    g = setup.grid
    run.telemetry.update(T=sol.T, M=sol.M, iterations=len(sol.history),
                         sigma_observed=sol.lmap.sigma_observed)
    run.csv("history.csv", ["iteration", "difference", "factor", "T", "M"],
            ([h["iteration"], float(h["difference"]), float(h["factor"]), float(h["T"]), float(h["M"])]
             for h in sol.history))
    run.csv("norms.csv", ["t", "mass", "rho_dev_l2", "u_l2"], _norm_rows(g, sol.rho, sol.u))
    save_trajectory(run.out / "trajectory", g, sol.rho, sol.u, cfg.output.snapshot_every or 1)
    mres, ures = fp.residual_check(g, setup.model, setup.pressure, sol.rho, sol.u)
    run.telemetry.update(mass_residual=mres, momentum_residual=ures)
    run.csv("residuals.csv", ["mass_residual", "momentum_residual"], [[mres, ures]])
    run.verdict("fixed-point converged", sol.history[-1]["difference"] < cfg.solver.tol,
                f"T={sol.T:.6g} iterations={len(sol.history)}")
    run.verdict("residuals finite", np.isfinite(mres) and np.isfinite(ures), f"mass={mres:.3e} momentum={ures:.3e}")


def cmd_oracle(args, run: Run):
    cfg = run.cfg
    g = cfg.grid()
    rho0, u0 = cfg.initial_data()
    model, pressure = cfg.viscosity(), cfg.pressure_law()
    rho, u = orc.rk4_march(g, model, pressure, rho0, u0, cfg.problem.T, cfg.problem.n_t)
    run.csv("norms.csv", ["t", "mass", "rho_dev_l2", "u_l2"], _norm_rows(g, rho, u))
    save_trajectory(run.out / "trajectory", g, rho, u, cfg.output.snapshot_every or 1)
    drift = orc.mass_drift(g, rho)
    run.telemetry.update(mass_drift=drift)
    run.verdict("mass conserved", drift <= 1e-10, f"drift={drift:.3e}")


def cmd_compare(args, run: Run):
    ga, ra, ua = load_trajectory(args.a)
    gb, rb, ub = load_trajectory(args.b)
    if ga != gb or not np.allclose(ra.times, rb.times):
        raise errors.ConfigError("trajectories live on different grids or time samples")
    t = ra.times
    rows = []
    # density is measured against its deviation from the mean background
    for name, x, y, ref_field in (("rho", ra.values, rb.values, rb.values - rb.values.mean()),
                                  ("u", ua.values, ub.values, ub.values)):
        diff = _l2qt(ga, x - y, t)
        ref = _l2qt(ga, ref_field, t)
        rel = diff / ref if ref > 0 else diff
        rows.append([name, diff, rel])
        run.telemetry[f"{name}_relative"] = rel
    run.csv("compare.csv", ["field", "l2qt_difference", "relative"], rows)
    tol = args.tol
    for name, _, rel in rows:
        run.verdict(f"{name} difference within {tol:g}", rel <= tol, f"relative={rel:.3e}")


def cmd_verify_ellipticity(args, run: Run):
    cfg = run.cfg
    model = cfg.viscosity()
    s_max = args.s_max if args.s_max is not None else (cfg.model.s_max if np.isfinite(cfg.model.s_max) else 10.0)
    r_max = args.r_max if args.r_max is not None else (cfg.model.r_max if np.isfinite(cfg.model.r_max) else 10.0)
    rep = cst.ellipticity_scan(model, s_max, r_max, cfg.solver.n_scan)
    run.csv("ellipticity.csv", ["quantity", "value"], rep.rows())
    checks = cst.validate_model(model, s_max, r_max)
    for name, (ok, val) in checks.items():
        run.verdict(f"model {name}", ok, f"value={float(val):.3e}")
    run.telemetry.update(C_el=rep.value, s_argmin=rep.s_argmin, r_argmin=rep.r_argmin)
    run.verdict("ellipticity constant positive", rep.value > 0,
                f"C_el={rep.value:.6g} at s={rep.s_argmin:.6g} r={rep.r_argmin:.6g}")


def cmd_verify_symbol(args, run: Run):
    cfg = run.cfg
    model = cfg.viscosity()
    d = cfg.problem.d
    sector = sym.Sector(cfg.solver.beta, cfg.solver.nu)
    rho0, u0 = cfg.initial_data()
    g = cfg.grid()
    gamma1 = float(np.mean(rho0))
    gamma2 = gamma1 * float(np.mean(cfg.pressure_law().d1(rho0)))
    D = g.mean(g.sym_grad(u0))

    gap, lam_at, t_at = sym.sector_inequality_check(sector, cfg.solver.n_samples, cfg.initial.seed)
    run.verdict("sector inequality", gap <= 0, f"max_violation={gap:.3e} at lam={lam_at:.4g} |xi|^2={t_at:.4g}")

    xis = sym.xi_grid(d)
    lams = sector.lambda_grid()
    scan = sym.resolvent_bound_scan(model, D, gamma1, gamma2, sector, xis, lams, d=d)
    run.telemetry.update(resolvent_bound=scan.value, resolvent_bound_refined=scan.refined)
    a = sym.frozen_tensor(model, D, d)
    rows = []
    Q = sym.outer(xis)
    t = np.sum(xis**2, axis=-1)
    for lam in lams[:: max(1, len(lams) // 64)]:
        M = sym.symbol_matrix(a, Q, gamma1, gamma2, lam)
        vals = (abs(lam) + t) / sym.min_singular(M)
        j = int(np.argmax(vals))
        rows.append([float(lam.real), float(lam.imag)] + [float(v) for v in xis[j]] + [float(vals[j])])
    run.csv("resolvent_bound.csv", ["lam_re", "lam_im"] + [f"xi_{i}" for i in range(d)] + ["bound"], rows)
    run.verdict("resolvent bound finite and stable", np.isfinite(scan.value) and scan.refinement_change < 0.1,
                f"c={scan.value:.4g} refined={scan.refined:.4g}")

    R, ok = sym.perturbation_threshold(model, D, gamma1, gamma2, sector, xis, lams, d=d)
    run.telemetry.update(lambda_star=R)
    run.verdict("perturbation threshold located", np.isfinite(R) and ok, f"lambda*={R:.4g}")

    m_xis = sym.xi_grid(d, 12, 8)
    m_lams = sector.lambda_grid(9, 8)
    mrows = []
    all_ok = True
    for kind in sym.MULTIPLIER_KINDS:
        for alpha in _multi_indices_upto(d, d):
            chk = sym.multiplier_derivative_check(model, D, gamma1, gamma2, kind, alpha, m_lams, m_xis)
            mrows.append([kind, "".join(map(str, alpha)), chk.value, chk.halving_change])
            all_ok &= bool(np.isfinite(chk.value) and chk.halving_change < 0.15)
    run.csv("multipliers.csv", ["kind", "alpha", "c_alpha", "halving_change"], mrows)
    run.verdict("multiplier bounds finite and step-stable", all_ok, f"{len(mrows)} checks")


def _multi_indices_upto(d, order):
    for total in range(order + 1):
        for alpha in itertools.product(range(total + 1), repeat=d):
            if sum(alpha) == total:
                yield alpha


def cmd_contract(args, run: Run):
    cfg = run.cfg
    setup = _setup(cfg)
    rows = fp.contraction_study(setup, cfg.solver.n_pairs, cfg.solver.T_list, cfg.initial.seed)
    run.csv("contraction.csv", ["T", "M", "factor"], ([r.T, r.M, r.factor] for r in rows))
    run.telemetry["factors"] = {str(r.T): r.factor for r in rows}
    ordered = sorted(rows, key=lambda r: -r.T)
    decreasing = all(b.factor < a.factor for a, b in zip(ordered, ordered[1:])) or all(r.factor == 0 for r in rows)
    run.verdict("factor decreases with T", decreasing, " ".join(f"{r.T:g}:{r.factor:.3e}" for r in ordered))
    run.verdict("contraction at smallest T", ordered[-1].factor < 1.0, f"factor={ordered[-1].factor:.3e}")


def cmd_norms(args, run: Run):
    grid, rho, u = load_trajectory(args.trajectory)
    p, q = args.p, args.q
    rows = []
    if len(rho) >= 2 and np.allclose(np.diff(rho.times), rho.dt):
        theta = TimeSeries(rho.times, rho.values - rho.values[0])
        g_val = gauge(grid, theta, u, u.values[0], p, q)
        rows.append(["gauge", g_val])
        run.telemetry["gauge"] = g_val
    for n, t in enumerate(rho.times):
        rows.append([f"u_W1q@{t:.17g}", _sob(grid, u.values[n], q)])
    run.csv("norms.csv", ["quantity", "value"], rows)
    run.verdict("norms finite", all(np.isfinite(r[1]) for r in rows), f"{len(rows)} values")


def _sob(grid, f, q):
    return sobolev_norm(grid, f, NormSpec(2.0, q, 1))


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    epilog = "exit status:\n" + "\n".join(f"  {c:>3}  {m}" for c, m in EXIT_CODES)
    parser = argparse.ArgumentParser(
        prog="nncns", description="Pseudo-spectral solver suite for compressible non-Newtonian flow.",
        epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_, config=True):
        p = sub.add_parser(name, help=help_, epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
        if config:
            p.add_argument("-c", "--config", help="run configuration file (defaults when omitted)")
        p.add_argument("-o", "--out", help="output directory (overrides [output] directory)")
        p.set_defaults(func=func, uses_config=config)
        return p

    add("simulate", cmd_simulate, "solve the nonlinear problem by fixed-point iteration")
    add("oracle", cmd_oracle, "explicit Eulerian reference run")
    p = add("compare", cmd_compare, "relative L2(Q_T) difference of two trajectories", config=False)
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--tol", type=float, default=5e-3)
    p = add("verify-ellipticity", cmd_verify_ellipticity, "scan the ellipticity constant of the model")
    p.add_argument("--s-max", type=float)
    p.add_argument("--r-max", type=float)
    add("verify-symbol", cmd_verify_symbol, "sector, resolvent and multiplier checks")
    add("contract", cmd_contract, "measure the Lipschitz factor of the solution map")
    p = add("norms", cmd_norms, "recompute norms from a snapshot directory", config=False)
    p.add_argument("trajectory")
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--q", type=float, default=4.0)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args.config) if args.uses_config else None
    except errors.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return exc.exit_code
    out = Path(args.out or (cfg.output.directory if cfg else "run"))
    run = Run(args.command, out, cfg)
    if cfg is not None:
        (out / "config.ini").write_text(serialize(cfg))
    try:
        args.func(args, run)
    except errors.SolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return run.finish(exc)
    except Exception as exc:  # surfaced with its own status so scripts can tell it apart
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        run.finish(exc)
        return 1
    return run.finish()


if __name__ == "__main__":
    sys.exit(main())
