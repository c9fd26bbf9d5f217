#!/usr/bin/env python3
"""Lipschitz factor of the fixed-point map against the time horizon.

Runs the random-pair probe for the Newtonian and power-law models on the
default corpus and writes one CSV row per (model, T).
"""

import argparse
import logging
from pathlib import Path

from nncns import fixedpoint as fp
from nncns.config import RunConfig
from nncns.constitutive import ViscosityModel
from nncns.fields import write_csv

MODELS = {
    "newtonian": ViscosityModel.newtonian(1.0, 1.0),
    "power_law": ViscosityModel.power_law(1.0, 1.8, 1.0),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=32)
    ap.add_argument("--n-t", type=int, default=21)
    ap.add_argument("--amplitude", type=float, default=0.01)
    ap.add_argument("--pairs", type=int, default=4)
    ap.add_argument("--T", type=float, nargs="+", default=[0.1, 0.05, 0.025, 0.0125])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("contraction.csv"))
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = RunConfig()
    cfg.problem.n, cfg.problem.n_t = args.n, args.n_t
    cfg.initial.amplitude = args.amplitude
    rho0, u0 = cfg.initial_data()
    rows = []
    for name, model in MODELS.items():
        setup = fp.ProblemSetup(cfg.grid(), model, cfg.pressure_law(), rho0, u0, T=max(args.T), n_t=args.n_t)
        for r in fp.contraction_study(setup, args.pairs, args.T, args.seed):
            print(f"{name:10s} T={r.T:<8g} M={r.M:.4e} factor={r.factor:.4e}")
            rows.append([name, r.T, r.M, r.factor])
    write_csv(args.out, ["model", "T", "M", "factor"], rows)


if __name__ == "__main__":
    main()
