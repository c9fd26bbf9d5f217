"""Periodic grid, spectral calculus and the space-time norms of the solver.

Arrays follow one layout everywhere: component axes first, the ``d`` spatial
axes last. A scalar field on ``Grid(2, 64)`` has shape ``(64, 64)``, a vector
field ``(2, 64, 64)`` and a tensor field ``(2, 2, 64, 64)``; a time series
prepends one more axis. Every spectral routine acts on the trailing ``d`` axes
and broadcasts over the rest.

The domain is the torus ``[-1, 1]^d`` so wavenumbers are ``pi * k``. Spectral
coefficients use the forward-normalised convention: they are Fourier-series
coefficients, hence a constant field ``c`` has the single coefficient ``c``.
"""

from __future__ import annotations

import csv
import itertools
import os
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.fft as sfft
from scipy.integrate import trapezoid

from .errors import SolverError


def _workers():
    value = os.environ.get("NNCNS_THREADS")
    return int(value) if value else None


class Grid:
    """Uniform periodic grid on ``[-1, 1]^d`` with ``n`` points per axis."""

    def __init__(self, d: int, n: int):
        if d not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {d}")
        if n < 2 or n % 2:
            raise ValueError(f"points per axis must be even, got {n}")
        self.d = d
        self.n = n
        self.h = 2.0 / n
        self.shape = (n,) * d
        self.axes = tuple(range(-d, 0))
        self.volume = 2.0**d
        self.cell = self.h**d
        k = sfft.fftfreq(n, 1.0 / n)
        self.k1d = k
        self.nyquist = np.abs(k) == n // 2
        xi, xi_odd = [], []
        for a in range(d):
            shape = [1] * d
            shape[a] = n
            xi.append((np.pi * k).reshape(shape))
            xi_odd.append(np.where(self.nyquist, 0.0, np.pi * k).reshape(shape))
        # xi_odd drops the Nyquist mode, which has no real odd derivative
        self.xi = xi
        self.xi_odd = xi_odd

    def __repr__(self):
        return f"Grid(d={self.d}, n={self.n})"

    def __eq__(self, other):
        return isinstance(other, Grid) and (self.d, self.n) == (other.d, other.n)

    def __hash__(self):
        return hash((self.d, self.n))

    @cached_property
    def coords(self) -> np.ndarray:
        x = -1.0 + self.h * np.arange(self.n)
        return np.array(np.meshgrid(*([x] * self.d), indexing="ij"))

    @cached_property
    def xi_sq(self) -> np.ndarray:
        return sum(x**2 for x in self.xi)

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        keep = np.abs(self.k1d) < self.n / 3.0
        mask = np.ones(self.shape, dtype=bool)
        for a in range(self.d):
            shape = [1] * self.d
            shape[a] = self.n
            mask = mask & keep.reshape(shape)
        return mask

    # transforms -------------------------------------------------------------

    def fft(self, f):
        f = np.asarray(f)
        if f.shape[-self.d :] != self.shape:
            raise SolverError(f"field shape {f.shape} does not match {self}")
        return sfft.fftn(f, axes=self.axes, norm="forward", workers=_workers())

    def ifft(self, c, real=True):
        c = np.asarray(c)
        if c.shape[-self.d :] != self.shape:
            raise SolverError(f"spectrum shape {c.shape} does not match {self}")
        out = sfft.ifftn(c, axes=self.axes, norm="forward", workers=_workers())
        return out.real if real else out

    def _back(self, c, like):
        return self.ifft(c, real=not np.iscomplexobj(like))

    def dealias(self, f):
        return self._back(self.fft(f) * self.dealias_mask, f)

    # derivatives ------------------------------------------------------------

    def derivative(self, f, axis: int, order: int = 1):
        """``order``-th partial derivative along ``axis`` (0-based)."""
        if order == 0:
            return np.array(f, copy=True)
        xi = self.xi_odd[axis] if order % 2 else self.xi[axis]
        return self._back(self.fft(f) * (1j * xi) ** order, f)

    def second_derivative(self, f, l: int, m: int):
        if l == m:
            return self.derivative(f, l, 2)
        return self._back(-self.fft(f) * self.xi_odd[l] * self.xi_odd[m], f)

    def grad(self, f):
        """Gradient of a scalar, or ``(grad u)[i, j] = d_j u_i`` of a vector."""
        c = self.fft(f)
        parts = [self._back(c * (1j * self.xi_odd[j]), f) for j in range(self.d)]
        return np.stack(parts, axis=-self.d - 1)

    def hessian(self, f):
        """``H[..., l, m] = d_l d_m f`` with the component axes of ``f`` first."""
        c = self.fft(f)
        lead = np.shape(f)[: -self.d]
        out = np.empty(lead + (self.d, self.d) + self.shape, dtype=np.result_type(f, float))
        for l in range(self.d):
            for m in range(l, self.d):
                if l == m:
                    sym = -self.xi[l] ** 2
                else:
                    sym = -self.xi_odd[l] * self.xi_odd[m]
                v = self._back(c * sym, f)
                idx = (Ellipsis, l, m) + (slice(None),) * self.d
                out[idx] = v
                idx = (Ellipsis, m, l) + (slice(None),) * self.d
                out[idx] = v
        return out

    def div(self, u):
        """Divergence of a vector, or row-wise ``sum_j d_j S[i, j]`` of a tensor."""
        c = self.fft(u)
        d = self.d
        acc = 0
        for j in range(d):
            idx = (Ellipsis, j) + (slice(None),) * d
            acc = acc + c[idx] * (1j * self.xi_odd[j])
        return self._back(acc, u)

    def laplacian(self, f):
        return self._back(-self.fft(f) * self.xi_sq, f)

    def sym_grad(self, u):
        g = self.grad(u)
        return 0.5 * (g + np.swapaxes(g, 0, 1))

    # integration ------------------------------------------------------------

    def integrate(self, f):
        """Rectangle rule over the spatial axes."""
        return np.sum(f, axis=self.axes) * self.cell

    def mean(self, f):
        return np.mean(f, axis=self.axes)

    def lq_norm(self, f, q: float = 2.0) -> float:
        """``L^q`` norm summed over components: ``(sum_i int |f_i|^q)^(1/q)``."""
        a = np.abs(np.asarray(f))
        if np.isinf(q):
            return float(a.max())
        return float((np.sum(a**q) * self.cell) ** (1.0 / q))

    # off-grid evaluation ----------------------------------------------------

    def _extended(self, c):
        """Coefficients on ``k = -n/2 .. n/2`` with the Nyquist mode split in half."""
        d = self.d
        ext = sfft.fftshift(c, axes=self.axes)
        for a in range(d):
            ax = ext.ndim - d + a
            first = np.take(ext, [0], axis=ax)
            ext = np.concatenate([ext, first], axis=ax)
            sl = [slice(None)] * ext.ndim
            sl[ax] = 0
            ext[tuple(sl)] *= 0.5
            sl[ax] = -1
            ext[tuple(sl)] *= 0.5
        return ext

    def interpolate(self, f, points, chunk: int = 4096):
        """Evaluate the trigonometric interpolant of ``f`` at ``points``.

        ``points`` has shape ``(d, P)``; the result has shape ``lead + (P,)``.
        Direct mode summation, exact for band-limited data.
        """
        f = np.asarray(f)
        points = np.asarray(points, dtype=float).reshape(self.d, -1)
        lead = f.shape[: -self.d]
        ext = self._extended(self.fft(f)).reshape((-1,) + (self.n + 1,) * self.d)
        kk = np.pi * np.arange(-self.n // 2, self.n // 2 + 1)
        P = points.shape[1]
        out = np.empty((ext.shape[0], P), dtype=complex)
        for s in range(0, P, chunk):
            pts = points[:, s : s + chunk] + 1.0  # grid index 0 sits at x = -1
            basis = [np.exp(1j * pts[a][:, None] * kk[None, :]) for a in range(self.d)]
            for c_idx in range(ext.shape[0]):
                C = ext[c_idx]
                if self.d == 1:
                    val = basis[0] @ C
                elif self.d == 2:
                    val = np.sum((basis[0] @ C) * basis[1], axis=1)
                else:
                    t = (basis[0] @ C.reshape(self.n + 1, -1)).reshape(-1, self.n + 1, self.n + 1)
                    t = np.einsum("pbc,pb->pc", t, basis[1])
                    val = np.sum(t * basis[2], axis=1)
                out[c_idx, s : s + chunk] = val
        out = out.reshape(lead + (P,))
        return out if np.iscomplexobj(f) else out.real


# ---------------------------------------------------------------------------
# containers


@dataclass
class Field:
    """A field on a grid with a lazily computed spectrum."""

    grid: Grid
    phys: np.ndarray
    rank: int = 0
    time: float = 0.0

    def __post_init__(self):
        self.phys = np.asarray(self.phys, dtype=float)
        expected = (self.grid.d,) * self.rank + self.grid.shape
        if self.phys.shape != expected:
            raise SolverError(f"rank-{self.rank} field needs shape {expected}, got {self.phys.shape}")

    @cached_property
    def spec(self) -> np.ndarray:
        return self.grid.fft(self.phys)

    @classmethod
    def from_spec(cls, grid, spec, rank=0, time=0.0):
        return cls(grid, grid.ifft(spec), rank=rank, time=time)

    def roundtrip_error(self) -> float:
        back = self.grid.ifft(self.spec)
        return float(np.max(np.abs(back - self.phys)) / max(np.max(np.abs(self.phys)), 1e-300))


@dataclass
class TimeSeries:
    """Samples of a field on a uniform time grid ``0 = t_0 < ... < t_{n-1} = T``."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values)
        if self.times.ndim != 1 or len(self.times) != len(self.values):
            raise SolverError("times and values disagree in length")
        if len(self.times) > 1:
            steps = np.diff(self.times)
            if np.any(steps <= 0):
                raise SolverError("sample times must be strictly increasing")
            if not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
                raise SolverError("sample times must be uniformly spaced")

    @classmethod
    def uniform(cls, T, n_t, values):
        return cls(np.linspace(0.0, T, n_t), values)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def __len__(self):
        return len(self.times)

    def time_derivative(self) -> np.ndarray:
        if len(self) < 2:
            raise SolverError("need at least two samples for a time derivative")
        edge = 2 if len(self) >= 3 else 1
        return np.gradient(self.values, self.dt, axis=0, edge_order=edge)

    def __sub__(self, other):
        if isinstance(other, TimeSeries):
            return TimeSeries(self.times, self.values - other.values)
        return TimeSeries(self.times, self.values - other)


@dataclass(frozen=True)
class NormSpec:
    p: float = 2.0
    q: float = 4.0
    k: int = 0

    def __post_init__(self):
        if not 1 < self.p < np.inf:
            raise ValueError(f"time exponent must lie in (1, inf), got {self.p}")
        if self.q < 1:
            raise ValueError(f"space exponent must be >= 1, got {self.q}")
        if self.k not in (0, 1, 2):
            raise ValueError(f"Sobolev order must be 0, 1 or 2, got {self.k}")

    def check_gauge(self, d):
        if not self.q > d:
            raise ValueError(f"solution gauge needs q > d, got q={self.q}, d={d}")


# ---------------------------------------------------------------------------
# norms


def _multi_indices(d, k):
    for order in range(k + 1):
        yield from itertools.combinations_with_replacement(range(d), order)


def _wkq_power(grid, f, q, k, lead):
    """``sum_{|alpha|<=k} int |d^alpha f|^q`` reduced over all but ``lead`` axes."""
    f = np.asarray(f)
    c = grid.fft(f)
    total = 0.0
    for alpha in _multi_indices(grid.d, k):
        sym = 1.0
        counts = np.bincount(np.asarray(alpha, dtype=int), minlength=grid.d) if alpha else np.zeros(grid.d, int)
        for a, m in enumerate(counts):
            if m:
                xi = grid.xi_odd[a] if m % 2 else grid.xi[a]
                sym = sym * (1j * xi) ** m
        g = f if not alpha else grid.ifft(c * sym)
        red = tuple(range(lead, f.ndim))
        total = total + np.sum(np.abs(g) ** q, axis=red) * grid.cell
    return total


def sobolev_norm(grid: Grid, f, spec: NormSpec) -> float:
    """``W^{k,q}`` norm with spectral derivatives and rectangle-rule integrals."""
    return float(_wkq_power(grid, f, spec.q, spec.k, 0) ** (1.0 / spec.q))


def _pointwise_norms(grid, series, spec):
    return _wkq_power(grid, series.values, spec.q, spec.k, 1) ** (1.0 / spec.q)


def mixed_norm(grid: Grid, series: TimeSeries, spec: NormSpec) -> float:
    """``L^p(0, T; W^{k,q})`` by the composite trapezoid rule in time."""
    if len(series) < 2:
        raise SolverError("mixed norm needs at least two time samples")
    norms = _pointwise_norms(grid, series, spec)
    return float(trapezoid(norms**spec.p, series.times) ** (1.0 / spec.p))


def sobolev_time_norm(grid: Grid, series: TimeSeries, spec: NormSpec) -> float:
    """``W^{1,p}(0, T; W^{k,q})``: the ``L^p`` norms of ``f`` and ``d_t f`` combined."""
    base = mixed_norm(grid, series, spec)
    deriv = mixed_norm(grid, TimeSeries(series.times, series.time_derivative()), spec)
    return float((base**spec.p + deriv**spec.p) ** (1.0 / spec.p))


def v_norm(grid: Grid, series: TimeSeries, p: float, q: float) -> float:
    """Maximal-regularity norm ``L^p W^{2,q} + W^{1,p} L^q``."""
    return mixed_norm(grid, series, NormSpec(p, q, 2)) + sobolev_time_norm(grid, series, NormSpec(p, q, 0))


def gauge(grid: Grid, theta: TimeSeries, w: TimeSeries, u0, p: float, q: float) -> float:
    """Fixed-point gauge ``||theta||_{W^{1,p} W^{1,q}} + ||w - u0||_V``."""
    return sobolev_time_norm(grid, theta, NormSpec(p, q, 1)) + v_norm(grid, w - u0, p, q)


def embedding_check(grid: Grid, series: TimeSeries, p: float, q: float) -> float:
    """Observed ratio ``sup_t ||u||_{W^{1,inf}}`` over the maximal-regularity size."""
    if not q > grid.d:
        raise ValueError("embedding ratio is only meaningful for q > d")
    vals = series.values
    sup = 0.0
    for v in vals:
        sup = max(sup, float(np.max(np.abs(v))), float(np.max(np.abs(grid.grad(v)))))
    if sup == 0.0:
        return 0.0
    a = mixed_norm(grid, series, NormSpec(p, q, 2))
    b = sobolev_time_norm(grid, series, NormSpec(p, q, 0))
    return sup / (a**p + b**p) ** (1.0 / p)


# ---------------------------------------------------------------------------
# snapshot and CSV output

_MAGIC = b"NNCF"
_HEADER = struct.Struct("<4sHHIHd")  # magic, version, d, n, rank, time


def write_snapshot(path, field: Field):
    g = field.grid
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, 1, g.d, g.n, field.rank, float(field.time)))
        fh.write(np.ascontiguousarray(field.phys, dtype="<f8").tobytes(order="C"))


def read_snapshot(path) -> Field:
    raw = Path(path).read_bytes()
    magic, version, d, n, rank, time = _HEADER.unpack_from(raw)
    if magic != _MAGIC or version != 1:
        raise SolverError(f"{path}: not a field snapshot")
    grid = Grid(d, n)
    shape = (d,) * rank + grid.shape
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if data.size != int(np.prod(shape)):
        raise SolverError(f"{path}: payload size does not match header")
    return Field(grid, data.reshape(shape).copy(), rank=rank, time=time)


def fmt(x) -> str:
    return f"{float(x):.17g}"


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def write_slice_csv(path, grid: Grid, f, axis: int = 0):
    """Export the 1-D slice of a scalar field through the origin along ``axis``."""
    idx = [grid.n // 2] * grid.d
    idx[axis] = slice(None)
    x = -1.0 + grid.h * np.arange(grid.n)
    write_csv(path, ["x", "value"], zip(x, np.asarray(f)[tuple(idx)]))
