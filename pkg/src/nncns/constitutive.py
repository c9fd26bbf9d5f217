"""Viscosity laws, the stress tensor and its quasilinear coefficient tensor.

Tensor arguments use the layout of :mod:`nncns.fields`: a strain ``D`` is an
array of shape ``(d, d)`` or ``(d, d, *grid)``. The coefficient tensor is
returned as ``a[j, k, l, m]`` meaning ``a_{jk}^{lm}``, so that

    (div S)_j = sum_{k,l,m} a_{jk}^{lm} d_l d_m u_k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import sympy as sp
from numpy.polynomial import legendre

from .errors import EllipticityError, RangeViolation


def _const(value):
    return lambda x: np.full(np.shape(x), float(value))


def _zero(x):
    return np.zeros(np.shape(x))


@dataclass(frozen=True)
class ViscosityModel:
    """Shear viscosity ``mu(s)``, ``s = |D^D|^2``, and bulk law ``lambda(r)``, ``r = div u``."""

    mu: Callable
    mu_d1: Callable
    mu_d2: Callable
    mu_d3: Callable
    lam: Callable
    lam_d1: Callable
    lam_d2: Callable
    s_max: float = math.inf
    r_max: float = math.inf
    name: str = "custom"
    params: dict = field(default_factory=dict, compare=False)

    def mu_derivative(self, order):
        return (self.mu, self.mu_d1, self.mu_d2, self.mu_d3)[order]

    def lam_derivative(self, order):
        return (self.lam, self.lam_d1, self.lam_d2)[order]

    def with_ranges(self, s_max=None, r_max=None):
        return ViscosityModel(
            self.mu, self.mu_d1, self.mu_d2, self.mu_d3,
            self.lam, self.lam_d1, self.lam_d2,
            self.s_max if s_max is None else s_max,
            self.r_max if r_max is None else r_max,
            self.name, dict(self.params),
        )

    # -- families ----------------------------------------------------------

    @classmethod
    def newtonian(cls, mu0=1.0, lam0=1.0, **ranges):
        return cls(_const(mu0), _zero, _zero, _zero, _const(lam0), _zero, _zero,
                   name="newtonian", params={"mu0": mu0, "lam0": lam0}, **ranges)

    @classmethod
    def power_law(cls, mu0=1.0, p=1.8, lam0=1.0, **ranges):
        """``mu(s) = mu0 (1 + s)^((p - 2) / 2)``; shear thinning for ``p < 2``."""
        e = (p - 2.0) / 2.0
        return cls(
            lambda s: mu0 * (1.0 + s) ** e,
            lambda s: mu0 * e * (1.0 + s) ** (e - 1),
            lambda s: mu0 * e * (e - 1) * (1.0 + s) ** (e - 2),
            lambda s: mu0 * e * (e - 1) * (e - 2) * (1.0 + s) ** (e - 3),
            _const(lam0), _zero, _zero,
            name="power_law", params={"mu0": mu0, "p": p, "lam0": lam0}, **ranges,
        )

    @classmethod
    def polynomial(cls, mu_coeffs=(1.0, 1.0), lam_coeffs=(1.0,), **ranges):
        """Polynomial laws, coefficients in increasing degree."""
        mp = np.polynomial.Polynomial(mu_coeffs)
        lp = np.polynomial.Polynomial(lam_coeffs)
        mus = [mp.deriv(k) if k else mp for k in range(4)]
        lams = [lp.deriv(k) if k else lp for k in range(3)]
        wrap = lambda P: (lambda x: P(np.asarray(x, dtype=float)) + np.zeros(np.shape(x)))
        return cls(*map(wrap, mus), *map(wrap, lams), name="polynomial",
                   params={"mu_coeffs": list(mu_coeffs), "lam_coeffs": list(lam_coeffs)}, **ranges)

    @classmethod
    def from_expressions(cls, mu="1", lam="1", **ranges):
        """Laws given as expressions in ``s`` and ``r``; derivatives are symbolic."""
        s, r = sp.symbols("s r", real=True)
        mu_e = sp.sympify(mu, locals={"s": s})
        lam_e = sp.sympify(lam, locals={"r": r})
        if mu_e.free_symbols - {s} or lam_e.free_symbols - {r}:
            raise ValueError("viscosity expressions may only use s (for mu) and r (for lambda)")

        def make(expr, var):
            f = sp.lambdify(var, expr, "numpy")
            return lambda x: np.asarray(f(np.asarray(x, dtype=float)), dtype=float) + np.zeros(np.shape(x))

        mus = [make(sp.diff(mu_e, s, k), s) for k in range(4)]
        lams = [make(sp.diff(lam_e, r, k), r) for k in range(3)]
        return cls(*mus, *lams, name="expression", params={"mu": str(mu), "lam": str(lam)}, **ranges)


def make_model(family: str, **params) -> ViscosityModel:
    builders = {
        "newtonian": ViscosityModel.newtonian,
        "power_law": ViscosityModel.power_law,
        "polynomial": ViscosityModel.polynomial,
        "expression": ViscosityModel.from_expressions,
    }
    if family not in builders:
        raise ValueError(f"unknown viscosity family {family!r}; choose from {sorted(builders)}")
    return builders[family](**params)


@dataclass(frozen=True)
class PressureLaw:
    """Barotropic law ``pi(rho) = kappa * rho**gamma``."""

    kappa: float = 1.0
    gamma: float = 1.4

    def __call__(self, rho):
        return self.kappa * np.asarray(rho) ** self.gamma

    def d1(self, rho):
        return self.kappa * self.gamma * np.asarray(rho) ** (self.gamma - 1)

    def d2(self, rho):
        return self.kappa * self.gamma * (self.gamma - 1) * np.asarray(rho) ** (self.gamma - 2)


# ---------------------------------------------------------------------------
# tensor helpers


def _eye(d, like):
    extra = np.ndim(like) - 2
    return np.eye(d).reshape((d, d) + (1,) * extra)


def deviatoric(D):
    d = D.shape[0]
    return D - np.trace(D, axis1=0, axis2=1) / d * _eye(d, D)


def strain_invariants(D):
    """``(D^D, |D^D|^2, tr D)``."""
    Dd = deviatoric(D)
    return Dd, np.einsum("ij...,ij...->...", Dd, Dd), np.trace(D, axis1=0, axis2=1)


def check_ranges(model: ViscosityModel, s, r):
    s = np.asarray(s)
    r = np.asarray(r)
    bad_s = s > model.s_max
    if np.any(bad_s):
        idx = np.unravel_index(np.argmax(np.where(bad_s, s, -np.inf)), s.shape) if s.ndim else ()
        raise RangeViolation(
            f"|D^D|^2 = {float(s[idx]):.6g} exceeds s_max = {model.s_max} at point {idx}",
            index=idx, value=float(s[idx]))
    bad_r = np.abs(r) > model.r_max
    if np.any(bad_r):
        idx = np.unravel_index(np.argmax(np.where(bad_r, np.abs(r), -np.inf)), r.shape) if r.ndim else ()
        raise RangeViolation(
            f"tr D = {float(r[idx]):.6g} outside [-{model.r_max}, {model.r_max}] at point {idx}",
            index=idx, value=float(r[idx]))


def stress(model: ViscosityModel, D):
    """``S = 2 mu(|D^D|^2) D^D + lambda(tr D) tr D I``."""
    D = np.asarray(D, dtype=float)
    Dd, s, r = strain_invariants(D)
    check_ranges(model, s, r)
    d = D.shape[0]
    return 2.0 * model.mu(s) * Dd + (model.lam(r) * r) * _eye(d, D)


def stress_from_parts(model: ViscosityModel, G, r):
    """Stress built from a given trace-free part ``G`` and divergence ``r``."""
    s = np.einsum("ij...,ij...->...", G, G)
    check_ranges(model, s, r)
    d = G.shape[0]
    return 2.0 * model.mu(s) * G + (model.lam(r) * r) * _eye(d, G)


def coefficient_tensor(model: ViscosityModel, D):
    D = np.asarray(D, dtype=float)
    d = D.shape[0]
    Dd, s, r = strain_invariants(D)
    check_ranges(model, s, r)
    mu = model.mu(s)
    dmu = model.mu_d1(s)
    bulk = model.lam(r) + model.lam_d1(r) * r - 2.0 / d * mu
    I = np.eye(d)
    delta_a = np.einsum("jk,lm->jklm", I, I) + np.einsum("jm,kl->jklm", I, I)
    delta_c = np.einsum("km,jl->jklm", I, I)
    extra = (1,) * (D.ndim - 2)
    a = mu * delta_a.reshape(delta_a.shape + extra)
    a = a + 4.0 * dmu * np.einsum("jl...,km...->jklm...", Dd, Dd)
    a = a + bulk * delta_c.reshape(delta_c.shape + extra)
    return a


def quadratic_form(model: ViscosityModel, D, xi):
    """Closed form ``2 mu |xi^D|^2 + 4 mu' |D^D : xi^D|^2 + (lambda + lambda' r)(tr xi)^2``."""
    D = np.asarray(D, dtype=float)
    xi = np.asarray(xi, dtype=float)
    Dd, s, r = strain_invariants(D)
    check_ranges(model, s, r)
    xd = deviatoric(xi)
    tr = np.trace(xi, axis1=0, axis2=1)
    return (2.0 * model.mu(s) * np.einsum("ij...,ij...->...", xd, xd)
            + 4.0 * model.mu_d1(s) * np.einsum("ij...,ij...->...", Dd, xd) ** 2
            + (model.lam(r) + model.lam_d1(r) * r) * tr**2)


def contract_form(a, xi):
    """``sum a_{jk}^{lm} xi_{jl} xi_{km}``, the double contraction route."""
    return np.einsum("jklm...,jl...,km...->...", a, xi, xi)


# ---------------------------------------------------------------------------
# ellipticity


@dataclass
class EllipticityReport:
    value: float
    s_argmin: float
    r_argmin: float
    shear_min: float
    bulk_min: float
    shear_thinning: bool
    n_scan: int

    def rows(self):
        return [
            ("C_el", self.value),
            ("s_argmin", self.s_argmin),
            ("r_argmin", self.r_argmin),
            ("shear_min", self.shear_min),
            ("bulk_min", self.bulk_min),
            ("shear_thinning_branch", int(self.shear_thinning)),
            ("n_scan", self.n_scan),
        ]


def ellipticity_scan(model: ViscosityModel, s_max: float, r_max: float, n_scan: int = 1024) -> EllipticityReport:
    """Scan the shear and bulk lower bounds; no error on failure."""
    if n_scan < 2:
        raise ValueError("n_scan must be at least 2")
    s = np.linspace(0.0, s_max, n_scan)
    r = np.linspace(-r_max, r_max, n_scan)
    mu = model.mu(s)
    dmu = model.mu_d1(s)
    # mu' < 0 costs the Cauchy-Schwarz term 4 mu' s
    shear = np.where(dmu < 0, 2.0 * mu + 4.0 * dmu * s, 2.0 * mu)
    bulk = model.lam(r) + model.lam_d1(r) * r
    i, j = int(np.argmin(shear)), int(np.argmin(bulk))
    return EllipticityReport(
        value=float(min(shear[i], bulk[j])),
        s_argmin=float(s[i]), r_argmin=float(r[j]),
        shear_min=float(shear[i]), bulk_min=float(bulk[j]),
        shear_thinning=bool(np.any(dmu < 0)), n_scan=n_scan,
    )


def ellipticity_constant(model: ViscosityModel, s_max: float, r_max: float, n_scan: int = 1024) -> float:
    rep = ellipticity_scan(model, s_max, r_max, n_scan)
    if not rep.value > 0:
        raise EllipticityError(
            f"ellipticity constant {rep.value:.6g} is not positive "
            f"(minimiser s = {rep.s_argmin:.6g}, r = {rep.r_argmin:.6g})",
            s=rep.s_argmin, r=rep.r_argmin, value=rep.value)
    return rep.value


def validate_model(model: ViscosityModel, s_max: float, r_max: float, n: int = 257, h: float = 1e-4):
    """Sample the structural conditions and the supplied derivatives.

    Returns a dict of named checks, each ``(passed, worst value)``.
    """
    s = np.linspace(0.0, s_max, n)
    r = np.linspace(-r_max, r_max, n)
    out = {
        "mu_positive": model.mu(s).min(),
        "mu_plus_2s_mu1_positive": (model.mu(s) + 2.0 * model.mu_d1(s) * s).min(),
        "lam_plus_r_lam1_positive": (model.lam(r) + model.lam_d1(r) * r).min(),
    }
    checks = {k: (bool(v > 0), float(v)) for k, v in out.items()}
    sc = s[1:-1] if s_max > 0 else s
    sc = np.maximum(sc, h)
    for k in range(3):
        f, df = model.mu_derivative(k), model.mu_derivative(k + 1)
        fd = (f(sc + h) - f(sc - h)) / (2 * h)
        err = float(np.max(np.abs(df(sc) - fd) / (1.0 + np.abs(df(sc)))))
        checks[f"mu_d{k + 1}_fd"] = (err < 1e3 * h * h + 1e-9, err)
    for k in range(2):
        f, df = model.lam_derivative(k), model.lam_derivative(k + 1)
        fd = (f(r + h) - f(r - h)) / (2 * h)
        err = float(np.max(np.abs(df(r) - fd) / (1.0 + np.abs(df(r)))))
        checks[f"lam_d{k + 1}_fd"] = (err < 1e3 * h * h + 1e-9, err)
    return checks


# ---------------------------------------------------------------------------
# divergence of the stress


def stress_divergence(grid, model: ViscosityModel, u, D=None):
    """Quasilinear route: ``a(Du) : grad grad u`` with spectral derivatives."""
    if D is None:
        D = grid.sym_grad(u)
    a = coefficient_tensor(model, D)
    H = grid.hessian(u)  # H[k, l, m] = d_l d_m u_k
    return np.einsum("jklm...,klm...->j...", a, H)


def stress_divergence_direct(grid, model: ViscosityModel, u):
    """Conservative route: spectral divergence of the assembled stress."""
    return grid.div(stress(model, grid.sym_grad(u)))


def quasilinear_operator(grid, a, v):
    """``A(Du0)(Dv) = sum_{k,l,m} a_{jk}^{lm} d_l d_m v_k`` for a frozen tensor ``a``."""
    H = grid.hessian(v)
    return np.einsum("jklm...,klm...->j...", a, H)


# ---------------------------------------------------------------------------
# mean-value identities


def _gauss_nodes(n_quad, panels=None):
    if panels is None:
        panels = max(1, n_quad // 8)
    per = max(1, n_quad // panels)
    x, w = legendre.leggauss(per)
    edges = np.linspace(0.0, 1.0, panels + 1)
    nodes = np.concatenate([0.5 * (b - a) * x + 0.5 * (a + b) for a, b in zip(edges[:-1], edges[1:])])
    weights = np.concatenate([0.5 * (b - a) * w for a, b in zip(edges[:-1], edges[1:])])
    return nodes, weights


def mu_mean_value_residual(model: ViscosityModel, A, B, n_quad: int = 64, order: int = 0) -> float:
    """Residual of ``mu^(k)(|A|^2) - mu^(k)(|B|^2) = 2 int mu^(k+1)(|C_s|^2) C_s:(A - B) ds``."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    f, df = model.mu_derivative(order), model.mu_derivative(order + 1)
    sq = lambda M: np.einsum("ij...,ij...->...", M, M)
    lhs = f(sq(A)) - f(sq(B))
    nodes, weights = _gauss_nodes(n_quad)
    integral = 0.0
    for s, w in zip(nodes, weights):
        C = s * A + (1.0 - s) * B
        integral = integral + w * 2.0 * df(sq(C)) * np.einsum("ij...,ij...->...", C, A - B)
    return float(np.max(np.abs(lhs - integral)))


def lam_mean_value_residual(model: ViscosityModel, a, b, n_quad: int = 64) -> float:
    """Residual of ``lambda(a) - lambda(b) = int lambda'(s a + (1 - s) b)(a - b) ds``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    nodes, weights = _gauss_nodes(n_quad)
    integral = sum(w * model.lam_d1(s * a + (1 - s) * b) * (a - b) for s, w in zip(nodes, weights))
    return float(np.max(np.abs(model.lam(a) - model.lam(b) - integral)))


def mean_value_identity_check(model: ViscosityModel, A, B, n_quad: int = 64) -> float:
    """Worst residual of the shear identity (orders 0-2) and the bulk identity on ``tr``."""
    res = [mu_mean_value_residual(model, A, B, n_quad, k) for k in range(3)]
    res.append(lam_mean_value_residual(model, np.trace(A), np.trace(B), n_quad))
    return max(res)
