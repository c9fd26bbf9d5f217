"""Explicit Eulerian reference solver.

Independent of the Lagrangian machinery: the conservative equations

    d_t rho + div(rho u) = 0
    rho (d_t u + u . grad u) + grad pi(rho) = div S(D u)

are advanced with classical RK4 on the same spectral grid, with 2/3-rule
dealiasing of every nonlinear product.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import sympy as sp

from . import constitutive as cst
from .errors import DensityError, InstabilityError
from .fields import Grid, TimeSeries

log = logging.getLogger(__name__)


@dataclass
class EulerianState:
    rho: np.ndarray
    u: np.ndarray
    t: float = 0.0


def eulerian_rhs(grid: Grid, model, pressure, rho, u, dealias: bool = True):
    """``(d_t rho, d_t u)`` of the Eulerian system."""
    if np.any(rho <= 0):
        raise DensityError(f"density reaches {rho.min():.4g} <= 0")
    da = grid.dealias if dealias else (lambda f: f)
    rho_d, u_d = da(rho), da(u)
    drho = -grid.div(da(rho_d * u_d))
    gu = grid.grad(u_d)
    adv = da(np.einsum("ij...,j...->i...", gu, u_d))
    divS = da(cst.stress_divergence(grid, model, u_d))
    gp = grid.grad(da(pressure(rho_d)))
    du = da((divS - gp) / rho_d) - adv
    return drho, du


def newtonian_rhs_expanded(grid: Grid, mu0, lam0, pressure, rho, u):
    """Momentum right-hand side written out for constant viscosities (no dealiasing)."""
    d = grid.d
    div = grid.div(u)
    visc = mu0 * grid.laplacian(u) + (mu0 * (1 - 2 / d) + lam0) * grid.grad(div)
    adv = np.einsum("ij...,j...->i...", grid.grad(u), u)
    return (visc - grid.grad(pressure(rho))) / rho - adv


def stable_step(grid: Grid, model, pressure, rho, u, safety: float = 0.5) -> float:
    """RK4 step bound from the diffusive and acoustic spectral radii."""
    D = grid.sym_grad(u)
    a = cst.coefficient_tensor(model, D)
    # largest entry combination bounds the viscous symbol per unit |xi|^2
    visc = float(np.max(np.sum(np.abs(a), axis=(1, 3))))
    rho_min = float(rho.min())
    k_max = np.pi * grid.n / 2
    nu = visc / rho_min
    c = math.sqrt(float(np.max(pressure.d1(rho))))
    speed = c + float(np.max(np.abs(u)))
    dt_visc = 2.78 / (nu * k_max**2 * grid.d) if nu > 0 else math.inf
    dt_wave = 2.8 / (speed * k_max * grid.d) if speed > 0 else math.inf
    return safety * min(dt_visc, dt_wave)


def rk4_march(grid: Grid, model, pressure, rho0, u0, T: float, n_t: int, max_dt: float | None = None,
              source: Callable | None = None, growth: float = 1e3, dealias: bool = True):
    """Integrate to ``T`` and return ``(rho, u)`` sampled at ``n_t`` uniform times.

    The internal step divides the sample spacing evenly and respects
    :func:`stable_step`. ``source(t)`` optionally returns extra terms
    ``(s_rho, s_u)`` added to the right-hand side.
    """
    rho = np.array(rho0, dtype=float)
    u = np.array(u0, dtype=float)
    times = np.linspace(0.0, T, n_t)
    out_rho = np.empty((n_t,) + rho.shape)
    out_u = np.empty((n_t,) + u.shape)
    out_rho[0], out_u[0] = rho, u
    if n_t < 2:
        return TimeSeries(times, out_rho), TimeSeries(times, out_u)
    spacing = times[1] - times[0]
    bound = stable_step(grid, model, pressure, rho, u)
    if max_dt is not None:
        bound = min(bound, max_dt)
    sub = max(1, math.ceil(spacing / bound - 1e-12))
    dt = spacing / sub
    ref = max(float(np.max(np.abs(u))), float(np.max(np.abs(rho - rho.mean()))), 1e-12)

    def f(t, r, v):
        dr, dv = eulerian_rhs(grid, model, pressure, r, v, dealias)
        if source is not None:
            sr, sv = source(t)
            dr, dv = dr + sr, dv + sv
        return dr, dv

    t = 0.0
    for n in range(1, n_t):
        for _ in range(sub):
            k1 = f(t, rho, u)
            k2 = f(t + dt / 2, rho + dt / 2 * k1[0], u + dt / 2 * k1[1])
            k3 = f(t + dt / 2, rho + dt / 2 * k2[0], u + dt / 2 * k2[1])
            k4 = f(t + dt, rho + dt * k3[0], u + dt * k3[1])
            rho = rho + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            u = u + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
            t += dt
        size = max(float(np.max(np.abs(u))), float(np.max(np.abs(rho - rho.mean()))))
        if not np.isfinite(size) or size > growth * ref:
            raise InstabilityError(f"solution grew by more than {growth:g} at t = {t:.6g}")
        out_rho[n], out_u[n] = rho, u
    log.debug("rk4: %d substeps of %.3e per sample", sub, dt)
    return TimeSeries(times, out_rho), TimeSeries(times, out_u)


def mass_drift(grid: Grid, rho: TimeSeries) -> float:
    """``max_t |m(t) - m(0)| / m(0)`` with ``m = int rho``."""
    m = grid.integrate(rho.values)
    return float(np.max(np.abs(m - m[0])) / abs(m[0]))


# ---------------------------------------------------------------------------
# manufactured solutions


@dataclass
class Manufactured:
    """Exact trajectory with the forcing that makes it a solution."""

    rho: Callable
    u: Callable
    source: Callable


def manufactured(grid: Grid, model_mu: str, model_lam: str, kappa: float, gamma: float,
                 rho_expr: str, u_exprs: list[str]) -> Manufactured:
    """Symbolic forcing for prescribed ``rho(t, x)``, ``u(t, x)`` in 2-D.

    Expressions use ``t``, ``x``, ``y``; viscosities are expressions in ``s``
    and ``r`` as for :meth:`ViscosityModel.from_expressions`.
    """
    if grid.d != 2:
        raise ValueError("manufactured solutions are provided for d = 2")
    t, x, y, s_, r_ = sp.symbols("t x y s r", real=True)
    loc = {"t": t, "x": x, "y": y, "pi": sp.pi}
    rho = sp.sympify(rho_expr, locals=loc)
    u = [sp.sympify(e, locals=loc) for e in u_exprs]
    X = (x, y)
    gu = sp.Matrix(2, 2, lambda i, j: sp.diff(u[i], X[j]))
    D = (gu + gu.T) / 2
    div = D.trace()
    Dd = D - div / 2 * sp.eye(2)
    s_val = sum(Dd[i, j] ** 2 for i in range(2) for j in range(2))
    mu = sp.sympify(model_mu, locals={"s": s_}).subs(s_, s_val)
    lam = sp.sympify(model_lam, locals={"r": r_}).subs(r_, div)
    S = 2 * mu * Dd + lam * div * sp.eye(2)
    p = kappa * rho**gamma
    s_rho = sp.diff(rho, t) + sum(sp.diff(rho * u[i], X[i]) for i in range(2))
    s_u = [sp.diff(u[i], t) + sum(u[j] * sp.diff(u[i], X[j]) for j in range(2))
           + (sp.diff(p, X[i]) - sum(sp.diff(S[i, j], X[j]) for j in range(2))) / rho for i in range(2)]
    f_rho = sp.lambdify((t, x, y), rho, "numpy")
    f_u = [sp.lambdify((t, x, y), e, "numpy") for e in u]
    f_sr = sp.lambdify((t, x, y), s_rho, "numpy")
    f_su = [sp.lambdify((t, x, y), e, "numpy") for e in s_u]
    X0, X1 = grid.coords
    full = lambda f, tv: np.asarray(f(tv, X0, X1), dtype=float) + np.zeros(grid.shape)
    return Manufactured(
        rho=lambda tv: full(f_rho, tv),
        u=lambda tv: np.stack([full(f, tv) for f in f_u]),
        source=lambda tv: (full(f_sr, tv), np.stack([full(f, tv) for f in f_su])),
    )
