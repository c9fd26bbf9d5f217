"""The solution map on the ball ``H_{T,M}`` and the Banach iteration built on it.

A state is a pair ``(theta, w)`` sampled on a uniform time grid: the density
perturbation and the Lagrangian velocity. ``phi_map`` freezes the nonlinear
terms at the input state, solves the linearised system and returns the new
pair; its fixed point is a discrete solution of the Lagrangian equations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import trapezoid

from . import constitutive as cst
from . import lagrangian as lg
from . import linsolve as ls
from .errors import ConvergenceError, SolverError
from .fields import Grid, NormSpec, TimeSeries, gauge, sobolev_time_norm, v_norm

log = logging.getLogger(__name__)


@dataclass
class ProblemSetup:
    grid: Grid
    model: object
    pressure: object
    rho0: np.ndarray
    u0: np.ndarray
    T: float = 0.1
    n_t: int = 21
    p: float = 2.0
    q: float = 4.0
    sigma: float = 0.5
    M: float | None = None
    tol_linear: float = 1e-10

    def __post_init__(self):
        g = self.grid
        self.rho0 = np.broadcast_to(np.asarray(self.rho0, dtype=float), g.shape).copy()
        self.u0 = np.broadcast_to(np.asarray(self.u0, dtype=float), (g.d,) + g.shape).copy()
        NormSpec(self.p, self.q).check_gauge(g.d)
        if not self.rho0.min() > 0:
            raise SolverError(f"initial density must be positive, min is {self.rho0.min():.4g}")
        self.rho_star = float(g.mean(self.rho0))
        self.theta0 = self.rho0 - self.rho_star

    @property
    def times(self):
        return np.linspace(0.0, self.T, self.n_t)

    def with_T(self, T):
        return replace(self, T=T, M=None)

    def operator(self) -> ls.LinearOperatorData:
        return ls.LinearOperatorData(self.grid, self.model, self.pressure, self.rho_star, self.theta0, self.u0)


@dataclass
class FixedPointState:
    theta: TimeSeries
    w: TimeSeries
    gauge: float
    meta: dict = field(default_factory=dict)

    @classmethod
    def build(cls, setup: ProblemSetup, theta, w, **meta):
        th = TimeSeries(setup.times, theta)
        ws = TimeSeries(setup.times, w)
        return cls(th, ws, gauge(setup.grid, th, ws, setup.u0, setup.p, setup.q), dict(meta))

    @classmethod
    def initial(cls, setup: ProblemSetup):
        """``theta = 0``, ``w = u0`` for all times."""
        n_t = setup.n_t
        theta = np.zeros((n_t,) + setup.grid.shape)
        w = np.broadcast_to(setup.u0, (n_t,) + setup.u0.shape).copy()
        return cls.build(setup, theta, w)

    def recompute_gauge(self, setup) -> float:
        return gauge(setup.grid, self.theta, self.w, setup.u0, setup.p, setup.q)


def distance(setup: ProblemSetup, a: FixedPointState, b: FixedPointState) -> float:
    """``[a - b]``: the gauge of the difference of two states."""
    g = setup.grid
    dth = TimeSeries(a.theta.times, a.theta.values - b.theta.values)
    dw = TimeSeries(a.w.times, a.w.values - b.w.values)
    return (sobolev_time_norm(g, dth, NormSpec(setup.p, setup.q, 1))
            + v_norm(g, dw, setup.p, setup.q))


def linearized_forcing(setup: ProblemSetup, state: FixedPointState, op=None):
    """``(G, F)`` time series for the input state, plus the flow map used."""
    g = setup.grid
    op = op or setup.operator()
    lmap = lg.lagrangian_flow_map(g, state.w, setup.sigma)
    dwdt = state.w.time_derivative()
    G = np.empty((setup.n_t,) + g.shape)
    F = np.empty((setup.n_t, g.d) + g.shape)
    for n in range(setup.n_t):
        G[n], F[n] = lg.linearized_rhs(
            g, setup.model, setup.pressure, setup.rho_star, setup.theta0,
            state.theta.values[n], state.w.values[n], setup.u0, dwdt[n], lmap.E[n], a0=op.a0)
    return TimeSeries(setup.times, G), TimeSeries(setup.times, F), lmap


def phi_map(setup: ProblemSetup, state: FixedPointState, op=None) -> FixedPointState:
    """One application of the solution map."""
    op = op or setup.operator()
    G, F, lmap = linearized_forcing(setup, state, op)
    traj = ls.time_march(op, G, F, tol=setup.tol_linear)
    w = setup.u0[None] + traj.v.values
    out = FixedPointState.build(setup, traj.theta.values, w,
                                linear_iterations=traj.iterations, sigma_observed=lmap.sigma_observed)
    if setup.M is not None and out.gauge > setup.M:
        log.warning("output gauge %.4g exceeds M = %.4g", out.gauge, setup.M)
    return out


# ---------------------------------------------------------------------------
# contraction measurement


def smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


def band_limited(grid: Grid, rng: np.random.Generator, k_max: int = 2, lead=()):
    """Random real trigonometric polynomial with modes ``|k_i| <= k_max``."""
    c = np.zeros(tuple(lead) + grid.shape, dtype=complex)
    ks = range(-k_max, k_max + 1)
    for idx in np.ndindex(*([len(ks)] * grid.d)):
        k = tuple(ks[i] % grid.n for i in idx)
        c[(...,) + k] = rng.normal(size=lead) + 1j * rng.normal(size=lead)
    return grid.ifft(c, real=False).real


def random_probe(setup: ProblemSetup, rng: np.random.Generator, radius: float, k_max: int = 2):
    """Element of ``H_{T,M}`` with gauge ``radius``: bump-modulated band-limited fields."""
    g = setup.grid
    b = smoothstep(setup.times / setup.T)
    th = b.reshape((-1,) + (1,) * g.d) * band_limited(g, rng, k_max)[None]
    dw = b.reshape((-1,) + (1,) * (g.d + 1)) * band_limited(g, rng, k_max, lead=(g.d,))[None]
    raw = FixedPointState.build(setup, th, setup.u0[None] + dw)
    s = radius / raw.gauge
    return FixedPointState.build(setup, s * th, setup.u0[None] + s * dw)


def choose_M(setup: ProblemSetup, op=None) -> float:
    """``M = 2 [Phi(0, u0)]``."""
    first = phi_map(setup, FixedPointState.initial(setup), op)
    return 2.0 * first.gauge


@dataclass
class ContractionRow:
    T: float
    M: float
    factor: float
    ratios: list


def contraction_study(setup: ProblemSetup, n_pairs: int = 4, T_list=(0.1, 0.05, 0.025, 0.0125),
                      seed: int = 0, k_max: int = 2) -> list[ContractionRow]:
    """Measured Lipschitz factor of the solution map for each horizon in ``T_list``."""
    rows = []
    for T in T_list:
        s = setup.with_T(T)
        op = s.operator()
        M = choose_M(s, op)
        s = replace(s, M=M)
        rng = np.random.default_rng(seed)
        ratios = []
        for _ in range(n_pairs):
            if M == 0.0:
                log.info("M = 0: the ball is a single point, pair skipped")
                continue
            x1 = random_probe(s, rng, M / 2, k_max)
            x2 = random_probe(s, rng, M / 2, k_max)
            dx = distance(s, x1, x2)
            if dx == 0.0:
                log.info("identical pair skipped")
                continue
            dy = distance(s, phi_map(s, x1, op), phi_map(s, x2, op))
            ratios.append(dy / dx)
        rows.append(ContractionRow(T, M, max(ratios) if ratios else 0.0, ratios))
        log.info("T = %g: M = %.4g, factor = %.4g", T, M, rows[-1].factor)
    return rows


# ---------------------------------------------------------------------------
# nonlinear solve


@dataclass
class NonlinearSolution:
    setup: ProblemSetup
    state: FixedPointState
    rho: TimeSeries
    u: TimeSeries
    history: list
    lmap: object

    @property
    def T(self):
        return self.setup.T

    @property
    def M(self):
        return self.setup.M


def iterate(setup: ProblemSetup, tol: float = 1e-8, max_iter: int = 50, op=None):
    """Banach iteration from ``(0, u0)``; returns ``(state, history)``.

    Raises :class:`ConvergenceError` when the differences stop shrinking or
    ``max_iter`` is reached.
    """
    op = op or setup.operator()
    x = FixedPointState.initial(setup)
    history = []
    prev = None
    for k in range(1, max_iter + 1):
        y = phi_map(setup, x, op)
        diff = distance(setup, y, x)
        factor = diff / prev if prev else float("nan")
        history.append({"iteration": k, "difference": diff, "factor": factor, "T": setup.T, "M": setup.M})
        log.debug("iteration %d: difference %.3e", k, diff)
        x = y
        if diff < tol:
            return x, history
        if prev is not None and k > 2 and diff >= prev:
            raise ConvergenceError(f"iterate differences stopped shrinking at step {k} (factor {factor:.3g})")
        prev = diff
    raise ConvergenceError(f"no convergence to {tol:g} within {max_iter} iterations")


def to_eulerian(setup: ProblemSetup, state: FixedPointState):
    """Push ``(rho* + theta0 + theta, w)`` forward along the flow map of ``w``."""
    g = setup.grid
    lmap = lg.lagrangian_flow_map(g, state.w, setup.sigma)
    rho_l = setup.rho_star + setup.theta0[None] + state.theta.values
    rho = np.empty_like(rho_l)
    u = np.empty_like(state.w.values)
    for n, t in enumerate(setup.times):
        y = lg.inverse_points(g, lmap, n)
        rho[n] = g.interpolate(rho_l[n], y).reshape(g.shape)
        u[n] = g.interpolate(state.w.values[n], y).reshape((g.d,) + g.shape)
    return TimeSeries(setup.times, rho), TimeSeries(setup.times, u), lmap


def solve_nonlinear(setup: ProblemSetup, tol: float = 1e-8, max_iter: int = 50, max_halvings: int = 8):
    """Iterate to the fixed point, halving ``T`` on failure, and return Eulerian fields."""
    s = setup
    history = []
    for attempt in range(max_halvings + 1):
        try:
            op = s.operator()
            if s.M is None:
                s = replace(s, M=choose_M(s, op))
            state, hist = iterate(s, tol, max_iter, op)
            history.extend(hist)
            rho, u, lmap = to_eulerian(s, state)
            return NonlinearSolution(s, state, rho, u, history, lmap)
        except SolverError as exc:
            log.warning("T = %g failed (%s); halving", s.T, exc)
            history.append({"iteration": 0, "difference": float("nan"), "factor": float("nan"),
                            "T": s.T, "M": s.M if s.M is not None else float("nan")})
            s = s.with_T(s.T / 2)
    raise ConvergenceError(f"no fixed point after {max_halvings} halvings of T")


def residual_check(grid: Grid, model, pressure, rho: TimeSeries, u: TimeSeries):
    """``L^2(Q_T)`` norms of the mass and momentum residuals of an Eulerian trajectory."""
    drho = rho.time_derivative()
    m = rho.values[:, None] * u.values
    dm = TimeSeries(rho.times, m).time_derivative()
    mass, mom = [], []
    for n in range(len(rho)):
        r, v = rho.values[n], u.values[n]
        res1 = drho[n] + grid.div(r * v)
        flux = r * np.einsum("i...,j...->ij...", v, v)
        divS = cst.stress_divergence_direct(grid, model, v)
        res2 = dm[n] + grid.div(flux) + grid.grad(pressure(r)) - divS
        mass.append(grid.lq_norm(res1, 2) ** 2)
        mom.append(grid.lq_norm(res2, 2) ** 2)
    t = rho.times
    return float(np.sqrt(trapezoid(mass, t))), float(np.sqrt(trapezoid(mom, t)))
