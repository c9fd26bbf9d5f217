"""Flow maps, the geometric matrix ``E = I - (grad X)^{-1}`` and the
right-hand sides of the Lagrangian and linearised systems.

Index conventions (fixed here once, used throughout):

* ``(grad u)[i, j] = d_j u_i`` and ``J = grad X = I + grad(X - y)``;
* the chain rule reads ``grad_x f = grad_y f J^{-1}`` with gradients as rows,
  so ``grad_x u = grad_y u (I - E)``;
* a row vector times a matrix, ``(g E)_j = sum_i g_i E_ij``;
* ``tr(grad u E) = sum_ij (grad u)_ij E_ji``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid

from . import constitutive as cst
from .errors import ConvergenceError, DensityError, SigmaViolation, SingularJacobianError
from .fields import Grid, TimeSeries

log = logging.getLogger(__name__)


def _to_last(M, d):
    """``(d, d, *grid)`` -> ``(*grid, d, d)``."""
    return np.moveaxis(np.moveaxis(M, 0, -1), 0, -1)


def _to_first(M):
    return np.moveaxis(np.moveaxis(M, -1, 0), -1, 0)


def _frob(M):
    return np.sqrt(np.einsum("ij...,ij...->...", M, M))


def e_from_jacobian(J):
    """Pointwise ``I - J^{-1}``; raises if ``det J <= 0`` anywhere."""
    d = J.shape[0]
    Jl = _to_last(J, d)
    det = np.linalg.det(Jl)
    if np.any(det <= 0):
        idx = np.unravel_index(np.argmin(det), det.shape)
        raise SingularJacobianError(f"det grad X = {det[idx]:.3g} <= 0 at point {idx}")
    inv = np.linalg.inv(Jl)
    return np.eye(d).reshape((d, d) + (1,) * (J.ndim - 2)) - _to_first(inv)


@dataclass
class LagrangianMap:
    """Flow map samples on a time grid, stored as displacement ``X - y``."""

    grid: Grid
    times: np.ndarray
    disp: np.ndarray  # (n_t, d, *grid)
    J: np.ndarray  # (n_t, d, d, *grid)
    E: np.ndarray  # (n_t, d, d, *grid)
    sigma: float
    sigma_observed: float
    picard_iterations: list = field(default_factory=list)

    def index(self, t):
        k = int(np.argmin(np.abs(self.times - t)))
        if not np.isclose(self.times[k], t, rtol=0, atol=1e-12 * max(1.0, abs(t))):
            raise ValueError(f"t = {t} is not a sample time of this map")
        return k

    def points(self, k):
        """Mapped positions ``X(t_k, y)`` for every grid point, shape ``(d, P)``."""
        g = self.grid
        return (g.coords + self.disp[k]).reshape(g.d, -1)

    def e_bound_ratio(self, k) -> float:
        """``||E||_inf / ||J - I||_inf``, the observed constant of the E bound."""
        d = self.grid.d
        dev = _frob(self.J[k] - np.eye(d).reshape((d, d) + (1,) * d)).max()
        if dev == 0:
            return 0.0
        return float(_frob(self.E[k]).max() / dev)


def _finish_map(grid, times, disp, sigma, iterations):
    d = grid.d
    I = np.eye(d).reshape((1, d, d) + (1,) * d)
    J = I + grid.grad(disp)
    dev = np.array([_frob(J[k] - I[0]).max() for k in range(len(times))])
    for k, v in enumerate(dev):
        if not v < sigma:
            raise SigmaViolation(
                f"sup |int_0^t grad u| = {v:.4g} reaches sigma = {sigma} at t = {times[k]:.6g}",
                t=float(times[k]), observed=float(v))
    E = np.stack([e_from_jacobian(J[k]) for k in range(len(times))])
    return LagrangianMap(grid, np.asarray(times), disp, J, E, sigma, float(dev.max()), iterations)


def flow_map(grid: Grid, u: TimeSeries, sigma: float = 0.5, tol: float = 1e-12, max_iter: int = 50) -> LagrangianMap:
    """Integrate ``X(t, y) = y + int_0^t u(s, X(s, y)) ds`` for an Eulerian velocity.

    Trapezoid rule in time with a Picard loop per step; ``u`` is evaluated off
    the grid by direct Fourier summation.
    """
    times = u.times
    d = grid.d
    y = grid.coords.reshape(d, -1)
    disp = np.zeros((len(times), d) + grid.shape)
    iterations = []
    vel_prev = grid.interpolate(u.values[0], y)
    for n in range(len(times) - 1):
        dt = times[n + 1] - times[n]
        x_prev = y + disp[n].reshape(d, -1)
        x_new = x_prev + dt * vel_prev
        for it in range(1, max_iter + 1):
            vel_new = grid.interpolate(u.values[n + 1], x_new)
            x_next = x_prev + 0.5 * dt * (vel_prev + vel_new)
            change = np.max(np.abs(x_next - x_new))
            x_new = x_next
            if change < tol:
                break
        else:
            raise ConvergenceError(f"Picard iteration for the flow map stalled at t = {times[n + 1]:.6g}")
        iterations.append(it)
        vel_prev = grid.interpolate(u.values[n + 1], x_new)
        disp[n + 1] = (x_new - y).reshape((d,) + grid.shape)
    log.debug("flow map Picard iterations: %s", iterations)
    return _finish_map(grid, times, disp, sigma, iterations)


def lagrangian_flow_map(grid: Grid, w: TimeSeries, sigma: float = 0.5) -> LagrangianMap:
    """Flow map of a Lagrangian velocity ``w(t, y) = u(t, X(t, y))``: ``X = y + int w``."""
    disp = cumulative_trapezoid(w.values, w.times, axis=0, initial=0.0)
    return _finish_map(grid, w.times, disp, sigma, [])


def e_matrix(lmap: LagrangianMap, t) -> np.ndarray:
    return lmap.E[lmap.index(t)]


# ---------------------------------------------------------------------------
# composition with the map


def pull_back(grid: Grid, f, lmap: LagrangianMap, t):
    """Eulerian ``f(x)`` -> Lagrangian ``f(X(t, y))``."""
    k = lmap.index(t)
    lead = np.shape(f)[: -grid.d]
    return grid.interpolate(f, lmap.points(k)).reshape(lead + grid.shape)


def inverse_points(grid: Grid, lmap: LagrangianMap, k: int, tol: float = 1e-10, max_iter: int = 200):
    """Solve ``X(t_k, y) = x`` for every grid point ``x`` by ``y <- x - (X(y) - y)``."""
    d = grid.d
    x = grid.coords.reshape(d, -1)
    disp = lmap.disp[k]
    if not np.any(disp):
        return x.copy()
    y = x - disp.reshape(d, -1)
    for _ in range(max_iter):
        y_new = x - grid.interpolate(disp, y)
        change = np.max(np.abs(y_new - y))
        y = y_new
        if change < tol:
            return y
    raise ConvergenceError(f"inverse flow map did not converge at t = {lmap.times[k]:.6g}")


def push_forward(grid: Grid, f, lmap: LagrangianMap, t, tol: float = 1e-10):
    """Lagrangian ``f(y)`` -> Eulerian ``f(X^{-1}(t, x))``."""
    k = lmap.index(t)
    lead = np.shape(f)[: -grid.d]
    y = inverse_points(grid, lmap, k, tol)
    return grid.interpolate(f, y).reshape(lead + grid.shape)


# ---------------------------------------------------------------------------
# right-hand sides


def tr_grad_e(gu, E):
    return np.einsum("ij...,ji...->...", gu, E)


def corrected_strain(grid: Grid, u, E, gu=None):
    """Trace-free strain and divergence of ``u`` measured in Eulerian coordinates.

    Returns ``(G, D)`` with ``G = D^D u - sym(grad u E)^D`` and
    ``D = div u - tr(grad u E)``.
    """
    if gu is None:
        gu = grid.grad(u)
    guE = np.einsum("ik...,kj...->ij...", gu, E)
    sym = lambda M: 0.5 * (M + np.swapaxes(M, 0, 1))
    G = cst.deviatoric(sym(gu)) - cst.deviatoric(sym(guE))
    D = np.trace(gu, axis1=0, axis2=1) - tr_grad_e(gu, E)
    return G, D


def transformed_rhs(grid: Grid, model, pressure, rho, u, E):
    """``(G, F)`` of the Lagrangian system

        d_t rho + rho div u = G
        rho d_t u + grad pi(rho) - div S(D u) = F

    with ``G = rho tr(grad u E)`` and
    ``F = grad pi E + div S~ - div S(D u) - sum_jk d_k S~_ij E_kj``.
    """
    gu = grid.grad(u)
    G = rho * tr_grad_e(gu, E)
    Gd, Dv = corrected_strain(grid, u, E, gu)
    S_tilde = cst.stress_from_parts(model, Gd, Dv)
    S_y = cst.stress(model, 0.5 * (gu + np.swapaxes(gu, 0, 1)))
    gp = grid.grad(pressure(rho))
    pE = np.einsum("i...,ij...->j...", gp, E)
    dS = grid.grad(S_tilde)  # dS[i, j, k] = d_k S~_ij
    geo = np.einsum("ijk...,kj...->i...", dS, E)
    F = pE + grid.div(S_tilde) - grid.div(S_y) - geo
    return G, F


def transformed_rhs_expanded(grid: Grid, model, pressure, rho, u, E):
    """Same ``(G, F)`` assembled from the Eulerian chain rule directly.

    Independent route for checking :func:`transformed_rhs`: ``F`` is taken as
    ``rho d_t u + grad pi - div S`` evaluated through ``grad_x = grad_y (I - E)``.
    """
    d = grid.d
    I = np.eye(d).reshape((d, d) + (1,) * d)
    Jinv = I - E
    gu = grid.grad(u)
    gxu = np.einsum("ik...,kj...->ij...", gu, Jinv)
    G = rho * (np.trace(gu, axis1=0, axis2=1) - np.trace(gxu, axis1=0, axis2=1))
    S_x = cst.stress(model, 0.5 * (gxu + np.swapaxes(gxu, 0, 1)))
    dS = grid.grad(S_x)
    div_x = np.einsum("ijk...,kj...->i...", dS, Jinv)
    gp = grid.grad(pressure(rho))
    gxp = np.einsum("i...,ij...->j...", gp, Jinv)
    F = gp - gxp + div_x - grid.div(cst.stress(model, grid.sym_grad(u)))
    return G, F


def linearized_rhs(grid: Grid, model, pressure, rho_star, theta0, theta, u, u0, dudt, E, a0=None):
    """``(calG, calF)`` forcing the linearised system around ``(rho_star + theta0, u0)``.

    ``dudt`` is the time derivative of ``u`` at the same instant and ``a0``
    the coefficient tensor of ``D u0`` (recomputed when omitted).
    """
    rho_bar = rho_star + theta0
    rho = rho_bar + theta
    if np.any(rho <= 0):
        raise DensityError(f"density rho* + theta0 + theta reaches {rho.min():.4g} <= 0")
    G, F = transformed_rhs(grid, model, pressure, rho, u, E)
    calG = G - theta * grid.div(u) - rho_bar * grid.div(u0)
    if a0 is None:
        a0 = cst.coefficient_tensor(model, grid.sym_grad(u0))
    divS = cst.stress_divergence_direct(grid, model, u)
    A_term = cst.quasilinear_operator(grid, a0, u - u0)
    pp_bar = pressure.d1(rho_bar)
    calF = (F - theta * dudt + divS - A_term
            - pp_bar * grid.grad(theta0)
            - (pressure.d1(rho) - pp_bar) * grid.grad(theta0 + theta))
    return calG, calF
