"""Linear solves for the system linearised around ``(rho_bar, u0)``.

With ``rho_bar = rho* + theta0`` the unknowns ``(theta, v)`` obey

    d_t theta + rho_bar div v                         = G
    d_t v - (1/rho_bar) A(D u0) v + (pi'/rho_bar) grad theta = F / rho_bar

where ``A(D u0) v = sum a_{jk}^{lm}(D u0) d_l d_m v_k``. A resolvent step
eliminates ``theta = (g - rho_bar div u) / lam`` and leaves

    lam u - B_lam u = F_lam,
    B_lam u = (1/rho_bar) A u + (pi'/lam) (grad div u + div u grad(rho_bar) / rho_bar),
    F_lam   = f - pi' / (lam rho_bar) grad g.

The constant-coefficient part of ``B_lam`` (spatial means of the data) is
inverted exactly by its Fourier symbol; the remainder is handled by
preconditioned Richardson iteration, which realises the Neumann series.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import constitutive as cst
from . import symbol as sym
from .errors import DensityError, NonContractionError, SingularSymbolError
from .fields import Grid, TimeSeries

log = logging.getLogger(__name__)


@dataclass
class LinearOperatorData:
    """Frozen coefficients of the linearised operator."""

    grid: Grid
    model: object
    pressure: object
    rho_star: float
    theta0: np.ndarray
    u0: np.ndarray

    def __post_init__(self):
        g = self.grid
        self.theta0 = np.broadcast_to(np.asarray(self.theta0, dtype=float), g.shape).copy()
        self.u0 = np.broadcast_to(np.asarray(self.u0, dtype=float), (g.d,) + g.shape).copy()
        self.rho_bar = self.rho_star + self.theta0
        if np.any(self.rho_bar <= 0):
            raise DensityError(f"rho* + theta0 reaches {self.rho_bar.min():.4g} <= 0")
        self.pi_prime = self.pressure.d1(self.rho_bar) * np.ones(g.shape)
        D0 = g.sym_grad(self.u0)
        self.a0 = cst.coefficient_tensor(self.model, D0)
        self.gamma1 = float(g.mean(self.rho_bar))
        self.gamma2 = float(g.mean(self.pi_prime))
        self.D_bar = g.mean(D0)
        self.a_bar = cst.coefficient_tensor(self.model, self.D_bar)
        self.grad_log_rho = g.grad(self.rho_bar) / self.rho_bar

    @property
    def is_constant(self) -> bool:
        """True when every coefficient equals its spatial mean."""
        a_bar = self.a_bar.reshape(self.a_bar.shape + (1,) * self.grid.d)
        return (np.ptp(self.rho_bar) == 0.0 and np.ptp(self.pi_prime) == 0.0
                and np.max(np.abs(self.a0 - a_bar)) <= 1e-14 * np.max(np.abs(self.a_bar)))

    # physical-space operators -------------------------------------------------

    def A(self, v):
        return cst.quasilinear_operator(self.grid, self.a0, v)

    def grad_div(self, v):
        H = self.grid.hessian(v)
        return np.einsum("ljl...->j...", H)

    def B(self, u, lam):
        """Variable-coefficient ``B_lam u``."""
        div = self.grid.div(u)
        return self.A(u) / self.rho_bar + (self.pi_prime / lam) * (self.grad_div(u) + div * self.grad_log_rho)

    def B_const(self, u, lam):
        """Mean-coefficient part ``(1/gamma1) A(D_bar) u + gamma2/lam grad div u``."""
        a = self.a_bar.reshape(self.a_bar.shape + (1,) * self.grid.d)
        return cst.quasilinear_operator(self.grid, a, u) / self.gamma1 + (self.gamma2 / lam) * self.grad_div(u)

    def generator(self, theta, v):
        """``(-rho_bar div v, (1/rho_bar)(A v - pi' grad theta))``."""
        return (-self.rho_bar * self.grid.div(v),
                (self.A(v) - self.pi_prime * self.grid.grad(theta)) / self.rho_bar)


# ---------------------------------------------------------------------------
# reduction and constant-coefficient inversion


def reduce_resolvent(grid: Grid, G, F, lam, weight=1.0):
    """``F_lam = F - (weight / lam) grad G``.

    ``weight`` is ``pi'/rho_bar`` when ``F`` is the velocity forcing of the
    system in the form above and 1 for the bare reduction.
    """
    if lam == 0:
        raise ValueError("the resolvent reduction needs lam != 0")
    return F - (np.asarray(weight) / lam) * grid.grad(G)


def recover_theta(grid: Grid, G, u, rho_bar, lam):
    """``theta = (G - rho_bar div u) / lam``."""
    if lam == 0:
        raise ValueError("the resolvent reduction needs lam != 0")
    return (G - rho_bar * grid.div(u)) / lam


class ConstantResolvent:
    """Exact inverse of ``lam - B_c`` on a grid, mode by mode.

    ``B_c = (1/gamma1) A(a) + (c_p / lam) grad div`` with a constant tensor
    ``a``. In the notation of :mod:`nncns.symbol` this is the symbol with
    ``gamma2 = c_p * gamma1``.
    """

    def __init__(self, grid: Grid, a, gamma1: float, c_p: float, lam, cond_max: float = 1e14):
        self.grid = grid
        self.lam = complex(lam)
        Q = sym.discrete_second_moments(grid)
        M = sym.symbol_matrix(a, Q, gamma1, c_p * gamma1, self.lam)
        if self.lam.imag == 0.0:
            M = M.real
        cond = np.linalg.cond(M)
        if not np.all(cond < cond_max):
            idx = np.unravel_index(np.argmax(cond), cond.shape)
            xi = np.array([grid.xi[a].ravel()[idx[a]] for a in range(grid.d)])
            raise SingularSymbolError(
                f"symbol near-singular at xi = {xi}, lam = {self.lam:.6g} (cond {cond[idx]:.3g})",
                xi=xi, lam=self.lam, cond=float(cond[idx]))
        self.matrix = M
        self.inverse = np.linalg.inv(M)
        self.max_cond = float(cond.max())

    def __call__(self, F):
        F = np.asarray(F)
        c = np.moveaxis(self.grid.fft(F), 0, -1)
        u = np.einsum("...jk,...k->...j", self.inverse, c)
        u = np.moveaxis(u, -1, 0)
        real = np.isrealobj(F) and self.lam.imag == 0.0
        return self.grid.ifft(u, real=real)


def constant_resolvent_solve(grid: Grid, model, D, gamma1: float, gamma2: float, lam, F_lam):
    """Solve ``M(xi, lam) u_hat = F_hat`` with the symbol of :func:`nncns.symbol.assemble_symbol`."""
    a = sym.frozen_tensor(model, D, grid.d)
    return ConstantResolvent(grid, a, gamma1, gamma2 / gamma1, lam)(F_lam)


# ---------------------------------------------------------------------------
# variable coefficients


@dataclass
class ResolventTelemetry:
    iterations: int
    residual: float
    ratios: list = field(default_factory=list)

    @property
    def contraction(self) -> float:
        """Geometric mean of successive residual ratios (0 for one-step solves)."""
        r = [x for x in self.ratios if x > 0]
        if not r:
            return 0.0
        return float(np.exp(np.mean(np.log(r))))


def _norm(grid, f, q):
    return grid.lq_norm(np.abs(f), q)


def variable_resolvent_solve(op: LinearOperatorData, G, F, lam, tol: float = 1e-10, max_iter: int = 200,
                             window: int = 5, q: float = 2.0, precond: ConstantResolvent | None = None):
    """Solve ``(lam - A)(theta, u) = (G, F)`` in the operator form above.

    ``F`` is the velocity forcing already divided by ``rho_bar``. Returns
    ``(theta, u, telemetry)``.
    """
    grid = op.grid
    F_lam = reduce_resolvent(grid, G, F, lam, op.pi_prime / op.rho_bar)
    if precond is None:
        precond = ConstantResolvent(grid, op.a_bar, op.gamma1, op.gamma2, lam)
    scale = _norm(grid, F_lam, q)
    cplx = np.iscomplexobj(F_lam) or complex(lam).imag != 0.0
    u = np.zeros(F_lam.shape, dtype=complex if cplx else float)
    if scale == 0.0:
        return recover_theta(grid, G, u, op.rho_bar, lam), u, ResolventTelemetry(0, 0.0)
    residual = F_lam
    res_norm = scale
    ratios = []
    streak = 0
    for it in range(1, max_iter + 1):
        u = u + precond(residual)
        residual = F_lam - (lam * u - op.B(u, lam))
        new = _norm(grid, residual, q)
        ratio = new / res_norm
        ratios.append(ratio)
        res_norm = new
        if new <= tol * scale:
            tele = ResolventTelemetry(it, new / scale, ratios)
            return recover_theta(grid, G, u, op.rho_bar, lam), u, tele
        streak = streak + 1 if ratio >= 1.0 else 0
        if streak >= window:
            raise NonContractionError(
                f"Richardson iteration diverges at lam = {lam:.6g}; increase nu (ratios {ratios[-window:]})",
                ratios=ratios)
    raise NonContractionError(
        f"Richardson iteration did not reach {tol:g} in {max_iter} steps at lam = {lam:.6g}", ratios=ratios)


def resolvent_residual(op: LinearOperatorData, u, F_lam, lam, q: float = 2.0) -> float:
    """``||lam u - B_lam u - F_lam||_q / ||F_lam||_q``."""
    r = lam * u - op.B(u, lam) - F_lam
    return _norm(op.grid, r, q) / _norm(op.grid, F_lam, q)


def contraction_threshold(op: LinearOperatorData, G, F, nu: float = 1.0, max_doublings: int = 20, **kw):
    """Smallest ``lam = nu 2^k`` at which the Richardson iteration converges."""
    lam = nu
    for _ in range(max_doublings + 1):
        try:
            variable_resolvent_solve(op, G, F, lam, **kw)
            return lam
        except NonContractionError:
            log.info("no contraction at lam = %g, doubling", lam)
            lam *= 2.0
    raise NonContractionError(f"no contraction up to lam = {lam / 2:g}")


# ---------------------------------------------------------------------------
# time stepping


@dataclass
class LinearTrajectory:
    """Solution of the linearised system; ``v`` is the deviation ``u - u0``."""

    theta: TimeSeries
    v: TimeSeries
    iterations: list
    contraction: list


def time_march(op: LinearOperatorData, G: TimeSeries, F: TimeSeries, tol: float = 1e-10,
               max_iter: int = 200) -> LinearTrajectory:
    """Implicit Euler from zero data: ``(lam - A) U^{n+1} = lam U^n + (G, F / rho_bar)^{n+1}``.

    ``F`` is the momentum forcing as it appears next to ``rho_bar d_t u``;
    the division by ``rho_bar`` happens here. ``lam = 1 / dt``.
    """
    grid = op.grid
    times = G.times
    n_t = len(times)
    dtype = complex if (np.iscomplexobj(G.values) or np.iscomplexobj(F.values)) else float
    theta = np.zeros((n_t,) + grid.shape, dtype=dtype)
    v = np.zeros((n_t, grid.d) + grid.shape, dtype=dtype)
    iterations, contraction = [], []
    if n_t < 2:
        return LinearTrajectory(TimeSeries(times, theta), TimeSeries(times, v), iterations, contraction)
    lam = 1.0 / G.dt
    precond = ConstantResolvent(grid, op.a_bar, op.gamma1, op.gamma2, lam)
    for n in range(n_t - 1):
        g = lam * theta[n] + G.values[n + 1]
        f = lam * v[n] + F.values[n + 1] / op.rho_bar
        th, u, tele = variable_resolvent_solve(op, g, f, lam, tol=tol, max_iter=max_iter, precond=precond)
        theta[n + 1] = th
        v[n + 1] = u
        iterations.append(tele.iterations)
        contraction.append(tele.contraction)
    return LinearTrajectory(TimeSeries(times, theta), TimeSeries(times, v), iterations, contraction)
