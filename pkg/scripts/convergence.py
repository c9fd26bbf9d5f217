#!/usr/bin/env python3
"""Residual order under joint (dt, n) refinement and cross-validation against RK4.

For each level the fixed-point solution is computed, its Eulerian residuals
are measured, and the trajectory is compared with the explicit oracle.
"""

import argparse
import logging
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid

from nncns import fixedpoint as fp
from nncns import oracle as orc
from nncns.constitutive import PressureLaw, ViscosityModel
from nncns.fields import Grid, write_csv


def l2qt(grid, v, t):
    return float(np.sqrt(trapezoid(grid.integrate(np.sum(v.reshape(len(t), -1, *grid.shape) ** 2, axis=1)), t)))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", choices=["newtonian", "power_law"], default="newtonian")
    ap.add_argument("--amplitude", type=float, default=0.05)
    ap.add_argument("--T", type=float, default=0.1)
    ap.add_argument("--levels", type=int, default=3)
    ap.add_argument("--out", type=Path, default=Path("convergence.csv"))
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    model = ViscosityModel.newtonian() if args.model == "newtonian" else ViscosityModel.power_law(1.0, 1.8, 1.0)
    pres = PressureLaw(1.0, 1.4)
    eps = args.amplitude
    rows, prev = [], None
    for lvl in range(args.levels):
        n, n_t = 16 * 2**lvl, 10 * 2**lvl + 1
        g = Grid(2, n)
        X = g.coords
        rho0 = 1 + eps * np.cos(np.pi * X[0])
        u0 = eps * np.stack([np.sin(np.pi * X[1]), np.sin(np.pi * X[0])])
        sol = fp.solve_nonlinear(fp.ProblemSetup(g, model, pres, rho0, u0, T=args.T, n_t=n_t))
        mass, mom = fp.residual_check(g, model, pres, sol.rho, sol.u)
        rho, u = orc.rk4_march(g, model, pres, rho0, u0, sol.T, n_t)
        t = rho.times
        du = l2qt(g, sol.u.values - u.values, t) / l2qt(g, u.values, t)
        order = (np.nan, np.nan) if prev is None else (np.log2(prev[0] / mass), np.log2(prev[1] / mom))
        prev = (mass, mom)
        print(f"n={n:<4d} n_t={n_t:<4d} mass={mass:.3e} mom={mom:.3e} order={order[0]:.3f}/{order[1]:.3f} "
              f"u_vs_rk4={du:.3e} fp_mass_drift={orc.mass_drift(g, sol.rho):.2e}")
        rows.append([n, n_t, sol.T, mass, mom, order[0], order[1], du, orc.mass_drift(g, sol.rho)])
    write_csv(args.out, ["n", "n_t", "T", "mass_residual", "momentum_residual", "mass_order", "momentum_order",
                         "u_relative_vs_rk4", "fp_mass_drift"], rows)


if __name__ == "__main__":
    main()
