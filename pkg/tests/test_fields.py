import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nncns.errors import SolverError
from nncns.fields import (
    Field,
    Grid,
    NormSpec,
    TimeSeries,
    embedding_check,
    gauge,
    mixed_norm,
    read_snapshot,
    sobolev_norm,
    write_csv,
    write_snapshot,
)


def test_constant_spectrum(grid16):
    c = grid16.fft(np.full(grid16.shape, 2.5))
    assert c[0, 0] == pytest.approx(2.5, abs=1e-15)
    c[0, 0] = 0
    assert np.max(np.abs(c)) < 1e-15


def test_sine_has_two_modes(grid16):
    c = grid16.fft(np.sin(np.pi * grid16.coords[0]))
    nz = np.argwhere(np.abs(c) > 1e-13)
    assert sorted(map(tuple, nz)) == [(1, 0), (15, 0)]


@pytest.mark.parametrize("d,n", [(2, 32), (3, 8)])
def test_roundtrip(d, n, rng):
    g = Grid(d, n)
    f = Field(g, rng.normal(size=g.shape))
    assert f.roundtrip_error() <= 1e-13


def test_conjugate_symmetry(grid16, rng):
    c = grid16.fft(rng.normal(size=grid16.shape))
    flipped = np.conj(np.roll(c[::-1, ::-1], 1, axis=(0, 1)))
    np.testing.assert_allclose(c, flipped, atol=1e-15)


def test_shape_mismatch(grid16):
    with pytest.raises(SolverError):
        grid16.fft(np.zeros((8, 8)))


def test_grid_rejects_odd_points():
    with pytest.raises(ValueError):
        Grid(2, 15)


def test_derivative_of_sine(grid32):
    x = grid32.coords[0]
    np.testing.assert_allclose(grid32.derivative(np.sin(np.pi * x), 0), np.pi * np.cos(np.pi * x), atol=1e-12)
    assert np.max(np.abs(grid32.derivative(np.full(grid32.shape, 3.0), 0))) == 0.0


@given(st.integers(-7, 7), st.integers(-7, 7))
def test_laplacian_symbol(k1, k2):
    g = Grid(2, 16)
    X = g.coords
    e = np.exp(1j * np.pi * (k1 * X[0] + k2 * X[1]))
    np.testing.assert_allclose(g.laplacian(e), -np.pi**2 * (k1**2 + k2**2) * e, atol=1e-10)


def test_nyquist_dropped_for_odd_derivative(grid16):
    f = np.cos(np.pi * 8 * grid16.coords[0])
    assert np.max(np.abs(grid16.derivative(f, 0))) < 1e-12
    np.testing.assert_allclose(grid16.derivative(f, 0, 2), -(8 * np.pi) ** 2 * f, rtol=1e-12)


def test_parseval(grid32, rng):
    f = rng.normal(size=grid32.shape)
    c = grid32.fft(f)
    assert grid32.lq_norm(f, 2) ** 2 == pytest.approx(grid32.volume * np.sum(np.abs(c) ** 2), rel=1e-12)


def test_derivative_commutes_with_roundtrip(grid32, rng):
    f = rng.normal(size=grid32.shape)
    g = grid32.ifft(grid32.fft(f))
    np.testing.assert_allclose(grid32.derivative(g, 1), grid32.derivative(f, 1), atol=1e-10)


@pytest.mark.parametrize("q", [1.5, 2.0, 4.0, 7.0])
@pytest.mark.parametrize("d", [2, 3])
def test_norm_of_one(q, d):
    g = Grid(d, 8)
    assert sobolev_norm(g, np.ones(g.shape), NormSpec(2, q, 0)) == pytest.approx(2 ** (d / q), rel=1e-13)


def test_sine_l2_norm(grid32):
    f = np.sin(np.pi * grid32.coords[0])
    assert sobolev_norm(grid32, f, NormSpec(2, 2, 0)) == pytest.approx(np.sqrt(2), rel=1e-13)


def test_h1_norm_of_sine(grid32):
    # ||f||^2 + ||d1 f||^2 + ||d2 f||^2 = 2 + 2 pi^2
    f = np.sin(np.pi * grid32.coords[0])
    assert sobolev_norm(grid32, f, NormSpec(2, 2, 1)) == pytest.approx(np.sqrt(2 + 2 * np.pi**2), rel=1e-12)


@given(st.floats(-50, 50).filter(lambda c: c == 0 or abs(c) > 1e-50), st.integers(0, 2**32 - 1))
def test_norm_homogeneity(c, seed):
    g = Grid(2, 8)
    f = np.random.default_rng(seed).normal(size=g.shape)
    spec = NormSpec(2, 3, 1)
    assert sobolev_norm(g, c * f, spec) == pytest.approx(abs(c) * sobolev_norm(g, f, spec), rel=1e-12)


def test_mixed_norm_time_constant(grid16, rng):
    f = rng.normal(size=grid16.shape)
    ts = TimeSeries.uniform(1.0, 11, np.broadcast_to(f, (11,) + f.shape))
    spec = NormSpec(2, 4, 1)
    assert mixed_norm(grid16, ts, spec) == pytest.approx(sobolev_norm(grid16, f, spec), rel=1e-13)


def test_mixed_norm_linear_in_time(grid16, rng):
    f = rng.normal(size=grid16.shape)
    T, p = 0.7, 3.0
    t = np.linspace(0, T, 2001)
    ts = TimeSeries(t, t[:, None, None] * f)
    exact = sobolev_norm(grid16, f, NormSpec(p, 2, 0)) * (T ** (p + 1) / (p + 1)) ** (1 / p)
    assert mixed_norm(grid16, ts, NormSpec(p, 2, 0)) == pytest.approx(exact, rel=1e-6)


def test_mixed_norm_second_order_in_dt(grid16):
    f = np.sin(np.pi * grid16.coords[1])
    spec = NormSpec(2, 2, 0)
    exact = np.sqrt(2.0) * np.sqrt(0.5 - np.sin(2.0) / 4)  # int_0^1 sin(t)^2 dt
    errs = []
    for n_t in (11, 21, 41):
        t = np.linspace(0, 1, n_t)
        errs.append(abs(mixed_norm(grid16, TimeSeries(t, np.sin(t)[:, None, None] * f), spec) - exact))
    slopes = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(slopes > 1.8)


def test_mixed_norm_needs_two_samples(grid16):
    with pytest.raises(SolverError):
        mixed_norm(grid16, TimeSeries([0.0], np.zeros((1,) + grid16.shape)), NormSpec())


def test_timeseries_rejects_nonuniform():
    with pytest.raises(SolverError):
        TimeSeries([0.0, 0.1, 0.3], np.zeros((3, 2)))


def test_gauge_at_initial_state(grid16, rng):
    u0 = rng.normal(size=(2,) + grid16.shape)
    t = np.linspace(0, 0.1, 5)
    th = TimeSeries(t, np.zeros((5,) + grid16.shape))
    w = TimeSeries(t, np.broadcast_to(u0, (5,) + u0.shape))
    assert gauge(grid16, th, w, u0, 2.0, 4.0) == 0.0


def test_normspec_gauge_condition():
    NormSpec(2, 4).check_gauge(3)
    with pytest.raises(ValueError):
        NormSpec(2, 2).check_gauge(2)
    with pytest.raises(ValueError):
        NormSpec(1.0, 4)


def _steady_mode(g, n_t=5):
    X = g.coords
    u = np.stack([np.sin(np.pi * X[1]), np.cos(np.pi * X[0])])
    return TimeSeries.uniform(0.1, n_t, np.broadcast_to(u, (n_t,) + u.shape))


def test_embedding_ratio():
    g = Grid(2, 16)
    zero = TimeSeries.uniform(0.1, 3, np.zeros((3, 2) + g.shape))
    assert embedding_check(g, zero, 2, 4) == 0.0
    r16 = embedding_check(g, _steady_mode(g), 2, 4)
    r32 = embedding_check(Grid(2, 32), _steady_mode(Grid(2, 32)), 2, 4)
    assert np.isfinite(r16)
    assert abs(r32 - r16) / r16 < 0.05


def test_embedding_ratio_corpus_bound(rng):
    from nncns.fixedpoint import band_limited

    ratios = []
    for n in (16, 32):
        g = Grid(2, n)
        r = np.random.default_rng(7)
        u = band_limited(g, r, 2, lead=(2,))
        ratios.append(embedding_check(g, TimeSeries.uniform(0.1, 5, np.broadcast_to(u, (5,) + u.shape)), 2, 4))
    assert max(ratios) <= 10 * ratios[0]


def test_snapshot_roundtrip(tmp_path, grid16, rng):
    f = Field(grid16, rng.normal(size=(2,) + grid16.shape), rank=1, time=0.125)
    write_snapshot(tmp_path / "u.nncf", f)
    back = read_snapshot(tmp_path / "u.nncf")
    assert back.grid == grid16 and back.rank == 1 and back.time == 0.125
    np.testing.assert_array_equal(back.phys, f.phys)


def test_snapshot_rejects_foreign_file(tmp_path):
    (tmp_path / "x.nncf").write_bytes(b"\0" * 64)
    with pytest.raises(SolverError):
        read_snapshot(tmp_path / "x.nncf")


def test_csv_uses_17_digits(tmp_path):
    write_csv(tmp_path / "a.csv", ["x"], [[1 / 3]])
    assert (tmp_path / "a.csv").read_text().splitlines()[1] == "0.33333333333333331"


def test_interpolation_exact_for_band_limited(grid16, rng):
    X = grid16.coords
    f = np.sin(np.pi * X[0]) * np.cos(2 * np.pi * X[1]) + 0.3 * np.cos(3 * np.pi * X[1])
    pts = rng.uniform(-1, 1, size=(2, 50))
    ref = np.sin(np.pi * pts[0]) * np.cos(2 * np.pi * pts[1]) + 0.3 * np.cos(3 * np.pi * pts[1])
    np.testing.assert_allclose(grid16.interpolate(f, pts), ref, atol=1e-13)
