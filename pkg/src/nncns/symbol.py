"""Fourier symbols of the constant-coefficient resolvent and their bounds.

For a frozen strain ``D`` and reference constants ``gamma1`` (density) and
``gamma2`` (pressure slope) the resolvent problem ``lam u - B u = f`` becomes,
mode by mode, ``M(xi, lam) u_hat = f_hat`` with

    M = lam I + E(xi) + E(xi, lam),
    E(xi)_{jk}      = (1/gamma1) sum_{l,m} a_{jk}^{lm}(D) xi_l xi_m,
    E(xi, lam)_{jk} = gamma2 / (lam gamma1) xi_j xi_k.

Everything here is dense ``d x d`` linear algebra batched over samples.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import constitutive as cst
from .errors import SingularSymbolError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Sector:
    """``{lam : arg(lam - nu) <= pi - beta}`` with ``beta`` in ``(0, pi/2)``."""

    beta: float = np.pi / 4
    nu: float = 1.0

    def __post_init__(self):
        if not 0 < self.beta < np.pi / 2:
            raise ValueError(f"beta must lie in (0, pi/2), got {self.beta}")
        if not self.nu > 0:
            raise ValueError(f"nu must be positive, got {self.nu}")

    @property
    def opening(self) -> float:
        return np.pi - self.beta

    def contains(self, lam, slack: float = 1e-12):
        lam = np.asarray(lam, dtype=complex)
        return np.abs(np.angle(lam - self.nu)) <= self.opening + slack

    def points(self, radii, angles):
        """``nu + r exp(i phi)`` on the outer product of ``radii`` and ``angles``."""
        r = np.asarray(radii, dtype=float)[:, None]
        phi = np.asarray(angles, dtype=float)[None, :]
        return (self.nu + r * np.exp(1j * phi)).ravel()

    def sample(self, n: int, rng: np.random.Generator, r_max: float = 1e4, r_min: float = 1e-3):
        """Random points: log-uniform distance from ``nu``, uniform angle."""
        r = np.exp(rng.uniform(np.log(r_min), np.log(r_max), n))
        phi = rng.uniform(-self.opening, self.opening, n)
        return self.nu + r * np.exp(1j * phi)

    def lambda_grid(self, n_radii: int = 41, n_angles: int = 16, r_min: float = 1e-2, r_max: float = 1e4):
        """Log-spaced ``|lam - nu|`` times angles that include both boundary rays."""
        radii = np.logspace(np.log10(r_min), np.log10(r_max), n_radii)
        angles = np.linspace(-self.opening, self.opening, n_angles)
        return self.points(radii, angles)


# ---------------------------------------------------------------------------
# assembly


def frozen_tensor(model, D, d: int):
    """Coefficient tensor at a constant strain (zero strain when ``D`` is None)."""
    D = np.zeros((d, d)) if D is None else np.asarray(D, dtype=float)
    return cst.coefficient_tensor(model, D)


def outer(xi):
    xi = np.asarray(xi, dtype=float)
    return xi[..., :, None] * xi[..., None, :]


def symbol_E(a, Q, gamma1: float):
    """``E_{jk} = (1/gamma1) sum a_{jk}^{lm} Q_{lm}`` for ``Q = xi xi^T`` or its discrete analogue."""
    return np.einsum("jklm,...lm->...jk", a, Q) / gamma1


def symbol_matrix(a, Q, gamma1: float, gamma2: float, lam):
    """``lam I + E + E_lam`` from a frozen tensor ``a`` and second-moment matrices ``Q``."""
    d = a.shape[0]
    lam = np.asarray(lam, dtype=complex)[..., None, None]
    return lam * np.eye(d) + symbol_E(a, Q, gamma1) + (gamma2 / gamma1) * Q / lam


def assemble_symbol(model, D, gamma1: float, gamma2: float, xi, lam):
    """Symbol ``lam I + E(xi) + E(xi, lam)``; ``xi`` has shape ``(..., d)``."""
    xi = np.asarray(xi, dtype=float)
    a = frozen_tensor(model, D, xi.shape[-1])
    return symbol_matrix(a, outer(xi), gamma1, gamma2, lam)


def discrete_second_moments(grid):
    """Per-mode ``Q`` with ``-Q_{lm}`` the symbol of ``d_l d_m`` on ``grid``.

    Diagonal entries keep the Nyquist mode, off-diagonal entries drop it, which
    matches :meth:`Grid.hessian` so that symbol inversion and physical-space
    operators agree exactly.
    """
    d = grid.d
    Q = np.empty(grid.shape + (d, d))
    for l in range(d):
        for m in range(d):
            if l == m:
                Q[..., l, m] = np.broadcast_to(grid.xi[l] ** 2, grid.shape)
            else:
                Q[..., l, m] = np.broadcast_to(grid.xi_odd[l] * grid.xi_odd[m], grid.shape)
    return Q


def min_singular(M):
    return np.linalg.svd(M, compute_uv=False)[..., -1]


# ---------------------------------------------------------------------------
# sector inequality


def sector_inequality_check(sector: Sector, n_samples: int = 100_000, seed: int = 0,
                            xi_sq=None, include_rays: bool = True):
    """Largest value of ``sin(beta/2)(|lam| + t) - |lam + t|`` over samples, ``t = |xi|^2``.

    The inequality holds on the sample set when the result is ``<= 0``. Returns
    ``(max_violation, lam_at_max, t_at_max)``.
    """
    rng = np.random.default_rng(seed)
    lam = sector.sample(n_samples, rng)
    if include_rays:
        radii = np.logspace(-3, 4, 400)
        ray = sector.points(radii, [-sector.opening, sector.opening])
        lam = np.concatenate([lam, ray])
    if xi_sq is None:
        xi_sq = np.concatenate([[0.0], np.logspace(-4, 6, 200)])
    t = np.asarray(xi_sq, dtype=float)
    L = lam[:, None]
    T = t[None, :]
    gap = np.sin(sector.beta / 2) * (np.abs(L) + T) - np.abs(L + T)
    idx = np.unravel_index(np.argmax(gap), gap.shape)
    return float(gap[idx]), complex(lam[idx[0]]), float(t[idx[1]])


# ---------------------------------------------------------------------------
# resolvent bound


def xi_grid(d: int, n_radii: int = 40, n_dirs: int = 16, r_min: float = 1e-2, r_max: float = 1e3):
    """Wavevectors on log-spaced shells times evenly spread unit directions."""
    radii = np.logspace(np.log10(r_min), np.log10(r_max), n_radii)
    if d == 1:
        dirs = np.array([[1.0], [-1.0]])
    elif d == 2:
        phi = np.linspace(0.0, np.pi, n_dirs, endpoint=False)
        dirs = np.stack([np.cos(phi), np.sin(phi)], axis=1)
    else:
        # Fibonacci sphere, half of it suffices since M(-xi) = M(xi)
        k = np.arange(n_dirs) + 0.5
        z = 1.0 - k / n_dirs
        rho = np.sqrt(1.0 - z * z)
        phi = np.pi * (1.0 + 5**0.5) * k
        dirs = np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)
    return (radii[:, None, None] * dirs[None, :, :]).reshape(-1, d)


@dataclass
class BoundScan:
    value: float
    lam: complex
    xi: np.ndarray
    refined: float | None = None

    @property
    def refinement_change(self) -> float | None:
        if self.refined is None:
            return None
        return abs(self.refined - self.value) / self.value


def _bound_values(a, gamma1, gamma2, xis, lams, chunk=256):
    Q = outer(xis)
    t = np.sum(xis**2, axis=-1)
    best = (-np.inf, None, None)
    for s in range(0, len(lams), chunk):
        L = lams[s : s + chunk]
        M = symbol_matrix(a, Q[None], gamma1, gamma2, L[:, None])
        smin = min_singular(M)
        if np.any(smin <= 1e-14 * (np.abs(L[:, None]) + t[None, :])):
            i, j = np.unravel_index(np.argmin(smin), smin.shape)
            raise SingularSymbolError(
                f"symbol singular at lam = {L[i]:.6g}, xi = {xis[j]}", xi=xis[j], lam=L[i], cond=np.inf)
        vals = (np.abs(L[:, None]) + t[None, :]) / smin
        i, j = np.unravel_index(np.argmax(vals), vals.shape)
        if vals[i, j] > best[0]:
            best = (float(vals[i, j]), complex(L[i]), xis[j])
    return best


def resolvent_bound_scan(model, D, gamma1: float, gamma2: float, sector: Sector,
                         xis=None, lams=None, refine: bool = True, d: int = 2) -> BoundScan:
    """Observed ``sup (|lam| + |xi|^2) |M(xi, lam)^{-1}|`` over the sample grids.

    With ``refine`` the scan is repeated on grids with twice as many samples
    per axis and the refined supremum stored for the stability check.
    """
    if xis is None:
        xis = xi_grid(d)
    xis = np.asarray(xis, dtype=float)
    if lams is None:
        lams = sector.lambda_grid()
    a = frozen_tensor(model, D, xis.shape[-1])
    value, lam, xi = _bound_values(a, gamma1, gamma2, xis, np.asarray(lams, dtype=complex))
    if not np.isfinite(value):
        raise SingularSymbolError("resolvent bound is not finite")
    scan = BoundScan(value, lam, xi)
    if refine:
        fine_xi = xi_grid(xis.shape[-1], 80, 32)
        fine_lam = sector.lambda_grid(81, 32)
        scan.refined = _bound_values(a, gamma1, gamma2, np.concatenate([xis, fine_xi]),
                                     np.concatenate([np.asarray(lams, complex), fine_lam]))[0]
    return scan


def perturbation_threshold(model, D, gamma1: float, gamma2: float, sector: Sector,
                           xis=None, lams=None, level: float = 0.5, d: int = 2):
    """Smallest ``R`` such that ``|(lam I + E)^{-1} E_lam| <= level`` for all ``|lam| >= R``.

    Returns ``(R, invertible_above)`` where the second entry confirms that the
    full symbol has no singular sample with ``|lam| >= R``.
    """
    if xis is None:
        xis = xi_grid(d)
    if lams is None:
        lams = sector.lambda_grid()
    xis = np.asarray(xis, dtype=float)
    lams = np.asarray(lams, dtype=complex)
    a = frozen_tensor(model, D, xis.shape[-1])
    Q = outer(xis)
    E = symbol_E(a, Q, gamma1)
    dd = xis.shape[-1]
    worst = np.empty(len(lams))
    smin_full = np.empty(len(lams))
    for i, lam in enumerate(lams):
        base = lam * np.eye(dd) + E
        El = (gamma2 / (gamma1 * lam)) * Q
        K = np.linalg.solve(base, El)
        worst[i] = np.linalg.norm(K, ord=2, axis=(-2, -1)).max()
        smin_full[i] = min_singular(base + El).min()
    mod = np.abs(lams)
    order = np.argsort(mod)
    bad = worst[order] > level
    if not bad.any():
        R = float(mod[order[0]])
    elif bad[-1]:
        R = np.inf
    else:
        last_bad = np.nonzero(bad)[0].max()
        R = float(mod[order[last_bad + 1]])
    above = mod >= R
    return R, bool(np.all(smin_full[above] > 0))


# ---------------------------------------------------------------------------
# multiplier derivative bounds

_STENCILS = {
    0: (np.array([0]), np.array([1.0])),
    1: (np.array([-1, 1]), np.array([-0.5, 0.5])),
    2: (np.array([-1, 0, 1]), np.array([1.0, -2.0, 1.0])),
    3: (np.array([-2, -1, 1, 2]), np.array([-0.5, 1.0, -1.0, 0.5])),
}

MULTIPLIER_KINDS = ("lam", "grad", "hess")


def multiplier(model, D, gamma1, gamma2, kind: str):
    """Matrix-valued multiplier ``m(lam, xi)`` of the resolvent family.

    ``lam``  -> ``lam M^{-1}``;
    ``grad`` -> ``|lam|^{1/2} i xi_j M^{-1}`` stacked over ``j``;
    ``hess`` -> ``-xi_j xi_k M^{-1}`` stacked over ``(j, k)``.
    """
    if kind not in MULTIPLIER_KINDS:
        raise ValueError(f"unknown multiplier kind {kind!r}")

    a = None

    def m(lam, xi):
        nonlocal a
        xi = np.asarray(xi, dtype=float)
        if a is None:
            a = frozen_tensor(model, D, xi.shape[-1])
        R = np.linalg.inv(symbol_matrix(a, outer(xi), gamma1, gamma2, lam))
        if kind == "lam":
            return np.asarray(lam)[..., None, None] * R
        if kind == "grad":
            return np.sqrt(np.abs(lam))[..., None, None, None] * 1j * xi[..., :, None, None] * R[..., None, :, :]
        return -(xi[..., :, None] * xi[..., None, :])[..., None, None] * R[..., None, None, :, :]

    return m


@dataclass
class MultiplierCheck:
    kind: str
    alpha: tuple
    value: float
    halved: float
    rejected: int

    @property
    def halving_change(self) -> float:
        return abs(self.halved - self.value) / max(self.value, 1e-300)


def multiplier_derivative_check(model, D, gamma1, gamma2, kind: str, alpha, lams, xis,
                                rel_step: float = 1e-4) -> MultiplierCheck:
    """Observed ``sup |d_xi^alpha m(lam, xi)| |xi|^{|alpha|}`` and its step-halved value.

    The step is ``h = rel_step * max(1, |xi|)``; samples with ``h > 0.1 |xi|``
    are rejected because the stencil would reach the singular point ``xi = 0``.
    """
    alpha = tuple(int(v) for v in alpha)
    order = sum(alpha)
    m = multiplier(model, D, gamma1, gamma2, kind)
    xis = np.asarray(xis, dtype=float)
    lams = np.asarray(lams, dtype=complex)
    norms = np.linalg.norm(xis, axis=-1)
    h = rel_step * np.maximum(1.0, norms)
    keep = h <= 0.1 * norms
    rejected = int(np.count_nonzero(~keep))
    if rejected:
        log.info("multiplier check: %d samples rejected near xi = 0", rejected)
    xs, hs, ns = xis[keep], h[keep], norms[keep]
    LL = np.repeat(lams, len(xs))
    XX = np.tile(xs, (len(lams), 1))
    HH = np.tile(hs, len(lams))
    NN = np.tile(ns, len(lams))
    best = []
    for scale in (1.0, 0.5):
        der = _fd_batched(m, LL, XX, alpha, HH * scale)
        flat = der.reshape(len(XX), -1)
        best.append(float(np.max(np.linalg.norm(flat, axis=1) * NN**order)))
    return MultiplierCheck(kind, alpha, best[0], best[1], rejected)


def _fd_batched(m, lams, xs, alpha, hs):
    """Tensor-product central difference ``d_xi^alpha m``; each sample has its own step."""
    d = xs.shape[-1]
    offs = [_STENCILS[alpha[a]][0] for a in range(d)]
    wts = [_STENCILS[alpha[a]][1] for a in range(d)]
    grids = np.meshgrid(*[np.arange(len(o)) for o in offs], indexing="ij")
    total = 0.0
    for idx in zip(*(g.ravel() for g in grids)):
        shift = np.array([offs[a][i] for a, i in enumerate(idx)], dtype=float)
        w = np.prod([wts[a][i] for a, i in enumerate(idx)])
        total = total + w * m(lams, xs + hs[:, None] * shift)
    scale = hs ** sum(alpha)
    return total / scale.reshape((-1,) + (1,) * (np.ndim(total) - 1))


# ---------------------------------------------------------------------------
# R-bound estimation


def rbound_estimate(family: Sequence[Callable], test_functions, n_trials: int = 256, seed: int = 0,
                    norm: Callable | None = None) -> float:
    """Monte-Carlo lower bound for the R-bound of ``family`` with exponent 2.

    ``test_functions`` is a list of batches; each batch holds one function per
    family member. For every batch the ratio

        ( mean_r || sum_j r_j T_j f_j ||^2 / mean_r || sum_j r_j f_j ||^2 )^{1/2}

    is formed with the same Rademacher draws in numerator and denominator; the
    largest ratio over batches is returned.
    """
    if norm is None:
        norm = lambda f: float(np.sqrt(np.sum(np.abs(f) ** 2)))
    rng = np.random.default_rng(seed)
    n = len(family)
    best = 0.0
    for batch in test_functions:
        if len(batch) != n:
            raise ValueError("each batch needs one test function per family member")
        fs = [np.asarray(f) for f in batch]
        if all(not np.any(f) for f in fs):
            raise ValueError("all test functions vanish")
        Tf = [T(f) for T, f in zip(family, fs)]
        signs = rng.choice([-1.0, 1.0], size=(n_trials, n))
        num = den = 0.0
        for r in signs:
            num += norm(sum(rj * g for rj, g in zip(r, Tf))) ** 2
            den += norm(sum(rj * f for rj, f in zip(r, fs))) ** 2
        if den == 0.0:
            continue
        best = max(best, float(np.sqrt(num / den)))
    return best
