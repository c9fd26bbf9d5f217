import numpy as np
import pytest
import sympy as sp
from hypothesis import given
from hypothesis import strategies as st

from nncns import lagrangian as lg
from nncns.constitutive import ViscosityModel
from nncns.errors import DensityError, SigmaViolation, SingularJacobianError
from nncns.fields import Grid, TimeSeries


def steady(g, u, T=0.1, n_t=5):
    return TimeSeries.uniform(T, n_t, np.broadcast_to(u, (n_t,) + u.shape).copy())


def swirl(g, eps):
    X = g.coords
    return eps * np.stack([np.sin(np.pi * X[1]) + 0.5 * np.cos(np.pi * X[0]),
                           np.sin(np.pi * (X[0] + X[1]))])


def test_constant_velocity_is_exact(grid16):
    c = np.array([0.3, -0.7])
    u = steady(grid16, c[:, None, None] * np.ones((2,) + grid16.shape))
    lmap = lg.flow_map(grid16, u)
    for k, t in enumerate(u.times):
        np.testing.assert_allclose(lmap.disp[k], c[:, None, None] * t * np.ones((2,) + grid16.shape),
                                   rtol=0, atol=1e-15)
    assert np.max(np.abs(lmap.E)) <= 1e-13


def test_zero_velocity_is_identity(grid16):
    lmap = lg.flow_map(grid16, steady(grid16, np.zeros((2,) + grid16.shape)))
    assert np.all(lmap.disp == 0.0) and np.all(lmap.E == 0.0)
    np.testing.assert_array_equal(lmap.J[:, 0, 0], 1.0)


def test_shear_flow_matches_symbolic_expansion(grid16):
    eps = 0.05
    X = grid16.coords
    u = steady(grid16, eps * np.stack([np.sin(np.pi * X[1]), np.zeros(grid16.shape)]), T=0.1, n_t=3)
    lmap = lg.flow_map(grid16, u)
    t_s, y2, e_s = sp.symbols("t y2 epsilon")
    J = sp.Matrix([[1, e_s * t_s * sp.pi * sp.cos(sp.pi * y2)], [0, 1]])
    E = sp.simplify(sp.eye(2) - J.inv())
    E12 = sp.lambdify((t_s, y2, e_s), E[0, 1], "numpy")
    k, t = 1, u.times[1]
    np.testing.assert_allclose(lmap.disp[k, 0], eps * t * np.sin(np.pi * X[1]), atol=1e-14)
    np.testing.assert_allclose(lmap.E[k, 0, 1], E12(t, X[1], eps), atol=1e-13)
    assert np.max(np.abs(lmap.E[k, 1, 0])) < 1e-14


def test_flow_map_invariants(grid16):
    u = steady(grid16, swirl(grid16, 0.3), T=0.2, n_t=6)
    lmap = lg.flow_map(grid16, u)
    assert np.all(lmap.disp[0] == 0.0)
    Jl = np.moveaxis(lmap.J, (1, 2), (-2, -1))
    assert np.all(np.linalg.det(Jl) > 0)
    El = np.moveaxis(lmap.E, (1, 2), (-2, -1))
    np.testing.assert_allclose(El, np.eye(2) - np.linalg.inv(Jl), atol=1e-12)
    assert lmap.sigma_observed < lmap.sigma
    assert max(lmap.picard_iterations) <= 25


def test_sigma_violation_on_steep_flow(grid16):
    X = grid16.coords
    u = steady(grid16, 5.0 * np.stack([np.sin(3 * np.pi * X[1]), np.zeros(grid16.shape)]), T=0.1, n_t=6)
    with pytest.raises(SigmaViolation) as exc:
        lg.flow_map(grid16, u)
    assert exc.value.t > 0 and exc.value.observed >= 0.5


def test_e_from_jacobian_small_cases():
    I = np.eye(2)[:, :, None]
    assert np.all(lg.e_from_jacobian(I) == 0)
    np.testing.assert_allclose(lg.e_from_jacobian(np.diag([2.0, 1.0])[:, :, None])[:, :, 0], np.diag([0.5, 0.0]))
    with pytest.raises(SingularJacobianError):
        lg.e_from_jacobian(np.diag([-1.0, 1.0])[:, :, None])


@given(st.integers(0, 2**32 - 1))
def test_e_neumann_series(seed):
    A = np.random.default_rng(seed).normal(size=(3, 3, 1))
    errs = []
    for eps in (1e-2, 5e-3):
        E = lg.e_from_jacobian(np.eye(3)[:, :, None] + eps * A)[:, :, 0]
        a = eps * A[:, :, 0]
        errs.append(np.max(np.abs(E - (a - a @ a))))
    # the remainder is third order
    assert errs[1] <= errs[0] / 8 * 1.2 + 1e-15


def test_e_vanishes_iff_gradient_vanishes(grid16):
    flat = steady(grid16, np.array([0.2, 0.1])[:, None, None] * np.ones((2,) + grid16.shape))
    assert np.max(np.abs(lg.flow_map(grid16, flat).E)) <= 1e-13
    assert np.max(np.abs(lg.flow_map(grid16, steady(grid16, swirl(grid16, 0.1))).E[-1])) > 1e-3


def test_transformed_rhs_vanishes_without_correction(grid16, power_law, pressure):
    X = grid16.coords
    rho = 1 + 0.1 * np.cos(np.pi * X[0])
    u = swirl(grid16, 0.2)
    E = np.zeros((2, 2) + grid16.shape)
    G, F = lg.transformed_rhs(grid16, power_law, pressure, rho, u, E)
    assert np.max(np.abs(G)) == 0.0 and np.max(np.abs(F)) < 1e-13
    G, F = lg.transformed_rhs(grid16, power_law, pressure, np.ones(grid16.shape), u, E)
    assert np.max(np.abs(F)) < 1e-13


@pytest.mark.parametrize("model", [ViscosityModel.newtonian(1.0, 1.0), ViscosityModel.power_law(1.0, 1.8, 1.0)])
def test_transformed_rhs_two_routes(grid32, model, pressure):
    X = grid32.coords
    w = steady(grid32, swirl(grid32, 0.3), T=0.2, n_t=5)
    lmap = lg.lagrangian_flow_map(grid32, w)
    rho = 1 + 0.1 * np.cos(np.pi * X[0]) * np.sin(np.pi * X[1])
    G1, F1 = lg.transformed_rhs(grid32, model, pressure, rho, w.values[-1], lmap.E[-1])
    G2, F2 = lg.transformed_rhs_expanded(grid32, model, pressure, rho, w.values[-1], lmap.E[-1])
    assert np.max(np.abs(G1 - G2)) <= 1e-10 * np.max(np.abs(G1))
    assert np.max(np.abs(F1 - F2)) <= 1e-10 * np.max(np.abs(F1))


def test_transformed_rhs_is_quadratic_in_amplitude(grid32, power_law, pressure):
    X = grid32.coords
    norms = []
    for eps in (0.04, 0.02, 0.01):
        w = steady(grid32, swirl(grid32, eps), T=0.1, n_t=5)
        lmap = lg.lagrangian_flow_map(grid32, w)
        rho = 1 + eps * np.cos(np.pi * X[0])
        _, F = lg.transformed_rhs(grid32, power_law, pressure, rho, w.values[-1], lmap.E[-1])
        norms.append(grid32.lq_norm(F, 2))
    ratios = np.array(norms[:-1]) / np.array(norms[1:])
    np.testing.assert_allclose(ratios, 4.0, rtol=0.05)


def test_linearized_rhs_rigid_rest(grid16, newtonian, pressure):
    u0 = np.array([0.4, -0.2])[:, None, None] * np.ones((2,) + grid16.shape)
    zero = np.zeros(grid16.shape)
    G, F = lg.linearized_rhs(grid16, newtonian, pressure, 1.3, zero, zero, u0, u0,
                             np.zeros_like(u0), np.zeros((2, 2) + grid16.shape))
    assert np.max(np.abs(G)) < 1e-15 and np.max(np.abs(F)) < 1e-15


def test_linearized_rhs_mass_term(grid16, newtonian, pressure):
    X = grid16.coords
    u0 = 0.1 * np.stack([np.sin(np.pi * X[0]), np.cos(np.pi * X[1])])
    zero = np.zeros(grid16.shape)
    G, _ = lg.linearized_rhs(grid16, newtonian, pressure, 1.3, zero, zero, u0, u0,
                             np.zeros_like(u0), np.zeros((2, 2) + grid16.shape))
    np.testing.assert_allclose(G, -1.3 * grid16.div(u0), atol=1e-14)


def test_linearized_rhs_newtonian_viscous_terms(grid16, pressure):
    # with u = u0 and E = 0: calF = div S(D u0) = mu0 lap u0 + (mu0 (1 - 2/d) + lam0) grad div u0
    mu0, lam0 = 0.7, 1.9
    m = ViscosityModel.newtonian(mu0, lam0)
    X = grid16.coords
    u0 = 0.1 * np.stack([np.sin(np.pi * X[0]) * np.cos(np.pi * X[1]), np.cos(2 * np.pi * X[1])])
    zero = np.zeros(grid16.shape)
    _, F = lg.linearized_rhs(grid16, m, pressure, 1.0, zero, zero, u0, u0,
                             np.zeros_like(u0), np.zeros((2, 2) + grid16.shape))
    ref = mu0 * grid16.laplacian(u0) + (mu0 * (1 - 2 / 2) + lam0) * grid16.grad(grid16.div(u0))
    np.testing.assert_allclose(F, ref, atol=1e-11)


def test_linearized_rhs_rejects_vacuum(grid16, newtonian, pressure):
    zero = np.zeros(grid16.shape)
    with pytest.raises(DensityError):
        lg.linearized_rhs(grid16, newtonian, pressure, 1.0, zero, -2 * np.ones(grid16.shape),
                          np.zeros((2,) + grid16.shape), np.zeros((2,) + grid16.shape),
                          np.zeros((2,) + grid16.shape), np.zeros((2, 2) + grid16.shape))


def test_pull_push_identity_map(grid16, rng):
    lmap = lg.flow_map(grid16, steady(grid16, np.zeros((2,) + grid16.shape)))
    f = rng.normal(size=grid16.shape)
    np.testing.assert_allclose(lg.pull_back(grid16, f, lmap, 0.1), f, atol=1e-13)
    np.testing.assert_allclose(lg.push_forward(grid16, f, lmap, 0.1), f, atol=1e-13)


def test_pull_push_constant_field(grid16):
    lmap = lg.flow_map(grid16, steady(grid16, swirl(grid16, 0.3)))
    c = np.full(grid16.shape, 2.0)
    np.testing.assert_allclose(lg.pull_back(grid16, c, lmap, 0.1), c, atol=1e-13)
    np.testing.assert_allclose(lg.push_forward(grid16, c, lmap, 0.1), c, atol=1e-13)


def test_pull_push_roundtrip_64(grid64):
    X = grid64.coords
    lmap = lg.flow_map(grid64, steady(grid64, swirl(grid64, 0.3), T=0.1, n_t=3))
    f = np.exp(np.sin(np.pi * X[0])) * np.cos(np.pi * X[1])
    back = lg.push_forward(grid64, lg.pull_back(grid64, f, lmap, 0.1), lmap, 0.1)
    assert np.max(np.abs(back - f)) <= 1e-8


def test_e_bound_ratio_is_order_one(grid16):
    lmap = lg.flow_map(grid16, steady(grid16, swirl(grid16, 0.3), T=0.2, n_t=5))
    assert 0.5 < lmap.e_bound_ratio(len(lmap.times) - 1) < 2.0


def test_e_matrix_requires_sample_time(grid16):
    lmap = lg.flow_map(grid16, steady(grid16, swirl(grid16, 0.1)))
    np.testing.assert_array_equal(lg.e_matrix(lmap, 0.05), lmap.E[2])
    with pytest.raises(ValueError):
        lg.e_matrix(lmap, 0.0333)

