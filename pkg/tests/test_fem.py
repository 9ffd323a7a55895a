"""Element matrices, assembly, SUPG, manufactured forcing, nonlinear viscosity."""

import math

import numpy as np
import pytest
import sympy

from stbddc_lab.fem import (ElementBlocks, PhysicsConfig, SpaceTimeMesh,
                            assemble_spatial_operators, element_matrices,
                            load_vector, plaplacian_viscosity, supg_tau)
from stbddc_lab.problems import (SinusoidalSolution, SpaceTimeSystem,
                                 apply_monolithic, sinusoidal_physics)


def unit_mesh(n, steps=1, scale=1.0):
    return SpaceTimeMesh(n, n, scale, scale, steps, steps * 0.1)


def symbolic_element_blocks(h, beta):
    """Exact Q1 element integrals on [0,h]^2 via symbolic integration."""
    x, y = sympy.symbols("x y")
    phi = [(1 - x / h) * (1 - y / h), (x / h) * (1 - y / h),
           (x / h) * (y / h), (1 - x / h) * (y / h)]
    mass = np.zeros((4, 4))
    diff = np.zeros((4, 4))
    conv = np.zeros((4, 4))
    for i in range(4):
        for j in range(4):
            mass[i, j] = float(sympy.integrate(phi[i] * phi[j],
                                               (x, 0, h), (y, 0, h)))
            gij = (sympy.diff(phi[i], x) * sympy.diff(phi[j], x)
                   + sympy.diff(phi[i], y) * sympy.diff(phi[j], y))
            diff[i, j] = float(sympy.integrate(gij, (x, 0, h), (y, 0, h)))
            bj = beta[0] * sympy.diff(phi[j], x) + beta[1] * sympy.diff(phi[j], y)
            conv[i, j] = float(sympy.integrate(bj * phi[i],
                                               (x, 0, h), (y, 0, h)))
    return mass, diff, conv


def test_element_mass_matches_hand_derived():
    em = element_matrices(1.0, PhysicsConfig(nu=1.0), delta=0.1)
    expected = np.array([[4, 2, 1, 2], [2, 4, 2, 1],
                         [1, 2, 4, 2], [2, 1, 2, 4]]) / 36.0
    assert np.allclose(em.m, expected, atol=1e-14)


def test_element_diffusion_matches_hand_derived():
    em = element_matrices(1.0, PhysicsConfig(nu=1.0), delta=0.1)
    expected = np.array([[4, -1, -2, -1], [-1, 4, -1, -2],
                         [-2, -1, 4, -1], [-1, -2, -1, 4]]) / 6.0
    assert np.allclose(em.k, expected, atol=1e-14)


def test_element_blocks_match_symbolic_oracle():
    h, beta = 0.25, (1.3, -0.4)
    mass, diff, conv = symbolic_element_blocks(h, beta)
    blocks = ElementBlocks(h, beta)
    assert np.allclose(blocks.mass, mass, atol=1e-14)
    assert np.allclose(blocks.diffusion, diff, atol=1e-13)
    assert np.allclose(blocks.convection, conv, atol=1e-14)
    # test-side streamline perturbation is the transposed convection integral
    assert np.allclose(blocks.streamline_mass, conv.T, atol=1e-14)


def test_pure_diffusion_rows_sum_to_zero():
    em = element_matrices(1.0, PhysicsConfig(nu=1.0), delta=0.5)
    assert np.allclose(em.k.sum(axis=1), 0.0, atol=1e-14)


def test_element_mass_is_spd_without_supg():
    em = element_matrices(0.2, PhysicsConfig(nu=0.5), delta=0.1)
    assert np.allclose(em.m, em.m.T)
    assert np.min(np.linalg.eigvalsh(em.m)) > 0


def test_supg_tau_pure_transient():
    assert supg_tau(0.1, 0.0, 0.0, 0.0, 0.25) == pytest.approx(0.25)


def test_supg_tau_cdr_value():
    tau = supg_tau(1 / 30, 1e-3, 1.0, 1e-4, 1 / 300)
    assert tau == pytest.approx(1.0 / (300 + 3.6 + 60 + 1e-4))
    assert tau == pytest.approx(2.7503e-3, rel=1e-4)


def test_supg_tau_homogeneity():
    t1 = supg_tau(1 / 20, 2e-3, 1.0, 0.0, 1e-2)
    t2 = supg_tau(1 / 10, 4e-3, 1.0, 0.0, 2e-2)
    assert t2 == pytest.approx(2 * t1)


def test_supg_terms_enter_mass_and_stiffness():
    phys = PhysicsConfig(nu=1e-3, beta=(1.0, 0.0), sigma=1e-4, supg=True)
    em = element_matrices(0.1, phys, delta=0.01)
    plain = element_matrices(0.1, PhysicsConfig(nu=1e-3, beta=(1.0, 0.0),
                                                sigma=1e-4), delta=0.01)
    assert em.tau > 0
    blocks = ElementBlocks(0.1, (1.0, 0.0))
    assert np.allclose(em.m - plain.m, em.tau * blocks.streamline_mass)
    assert np.allclose(em.k - plain.k,
                       em.tau * (blocks.streamline
                                 + 1e-4 * blocks.streamline_mass))


def test_assembled_center_node_2x2():
    mesh = unit_mesh(2)
    ops = assemble_spatial_operators(mesh, PhysicsConfig(nu=1.0))
    h = mesh.h
    assert ops.m.shape == (1, 1)
    assert ops.m[0, 0] == pytest.approx(4 * h * h / 9)
    assert ops.k[0, 0] == pytest.approx(8.0 / 3.0)


def test_assembled_diffusion_symmetric_and_mass_spd():
    mesh = unit_mesh(8)
    ops = assemble_spatial_operators(mesh, PhysicsConfig(nu=2.0))
    k = ops.k.toarray()
    assert np.allclose(k, k.T, atol=1e-13)
    m = ops.m.toarray()
    assert np.allclose(m, m.T, atol=1e-14)
    assert np.min(np.linalg.eigvalsh(m)) > 0  # dense eigenvalue oracle
    assert np.all(np.asarray(ops.m.sum(axis=1)).ravel() > 0)


def test_apply_monolithic_zero():
    mesh = unit_mesh(4, steps=3)
    ops = assemble_spatial_operators(mesh, PhysicsConfig(nu=1.0))
    out = apply_monolithic(ops.m, ops.k, mesh.delta,
                           np.zeros((3, mesh.n_interior)))
    assert np.all(out == 0)


def test_apply_monolithic_single_node():
    mesh = unit_mesh(2, steps=1)
    ops = assemble_spatial_operators(mesh, PhysicsConfig(nu=1.0))
    u = np.ones((1, 1))
    out = apply_monolithic(ops.m, ops.k, mesh.delta, u)
    expected = 4 * mesh.h**2 / 9 + mesh.delta * 8.0 / 3.0
    assert out[0, 0] == pytest.approx(expected)


def test_apply_monolithic_constant_in_time():
    mesh = unit_mesh(6, steps=4)
    ops = assemble_spatial_operators(mesh, PhysicsConfig(nu=1.0))
    rng = np.random.default_rng(0)
    w = rng.standard_normal(mesh.n_interior)
    u = np.tile(w, (4, 1))
    out = apply_monolithic(ops.m, ops.k, mesh.delta, u)
    assert np.allclose(out[0], ops.m @ w + mesh.delta * (ops.k @ w))
    for blk in out[1:]:
        assert np.allclose(blk, mesh.delta * (ops.k @ blk * 0 + ops.k @ w))


def test_manufactured_forcing_matches_finite_differences():
    nu, beta, sigma = 0.7, (0.3, -0.2), 0.05
    exact = SinusoidalSolution()
    f = exact.forcing(nu, beta, sigma)
    rng = np.random.default_rng(1)
    eps = 1e-6
    for _ in range(20):
        x, y, t = rng.uniform(0.1, 0.9, size=3)
        u = lambda xx, yy, tt: (math.sin(math.pi * xx) * math.sin(math.pi * yy)
                                * math.sin(math.pi * tt))
        dt = (u(x, y, t + eps) - u(x, y, t - eps)) / (2 * eps)
        lap = ((u(x + eps, y, t) - 2 * u(x, y, t) + u(x - eps, y, t))
               + (u(x, y + eps, t) - 2 * u(x, y, t) + u(x, y - eps, t))) / eps**2
        gx = (u(x + eps, y, t) - u(x - eps, y, t)) / (2 * eps)
        gy = (u(x, y + eps, t) - u(x, y - eps, t)) / (2 * eps)
        expected = dt - nu * lap + beta[0] * gx + beta[1] * gy + sigma * u(x, y, t)
        assert f(x, y, t) == pytest.approx(expected, rel=1e-4)


def test_poisson_forcing_formula():
    # f reduces to sin(pi x) sin(pi y) (pi cos(pi t) + 2 pi^2 sin(pi t))
    f = SinusoidalSolution().forcing(1.0)
    x, y, t = 0.3, 0.6, 0.25
    expected = (math.sin(math.pi * x) * math.sin(math.pi * y)
                * (math.pi * math.cos(math.pi * t)
                   + 2 * math.pi**2 * math.sin(math.pi * t)))
    assert f(x, y, t) == pytest.approx(expected)


def test_zero_forcing_gives_zero_rhs():
    mesh = unit_mesh(4, steps=2)
    system = SpaceTimeSystem(mesh, PhysicsConfig(nu=1.0, forcing=0.0))
    assert np.all(system.rhs == 0)


def test_sinusoidal_initial_condition_vanishes():
    physics, exact = sinusoidal_physics(nu=1.0)
    mesh = unit_mesh(4, steps=2)
    system = SpaceTimeSystem(mesh, physics)
    assert np.all(system.initial_interior == 0)
    assert exact(0.3, 0.4, 0.0) == 0.0


def test_plaplacian_viscosity_linear_field():
    mesh = unit_mesh(5)
    u = mesh.node_x + mesh.node_y
    for p in (0.5, 1.0, 2.0):
        nu = plaplacian_viscosity(u, mesh, nu0=1.5, p=p)
        assert np.allclose(nu, 1.5 * math.sqrt(2.0) ** p)


def test_plaplacian_viscosity_constant_field():
    mesh = unit_mesh(5)
    nu = plaplacian_viscosity(np.full(mesh.n_nodes, 3.0), mesh, nu0=2.0, p=1.0)
    assert np.allclose(nu, 0.0)


def test_plaplacian_viscosity_p_zero():
    mesh = unit_mesh(5)
    rng = np.random.default_rng(2)
    nu = plaplacian_viscosity(rng.standard_normal(mesh.n_nodes), mesh,
                              nu0=0.7, p=0.0)
    assert np.allclose(nu, 0.7)


def test_load_vector_constant_forcing_integrates_to_area():
    mesh = unit_mesh(6)
    load = load_vector(mesh, PhysicsConfig(nu=1.0, forcing=2.5), t=0.0)
    assert load.sum() == pytest.approx(2.5 * mesh.lx * mesh.ly)


def test_physics_validation():
    with pytest.raises(ValueError):
        PhysicsConfig(nu=0.0)  # no diffusion, no SUPG transport
    with pytest.raises(ValueError):
        PhysicsConfig(nu=1.0, nu0=-1.0, p=1.0)
    PhysicsConfig(nu=0.0, beta=(1.0, 0.0), supg=True)  # fine


def test_mesh_requires_square_cells():
    with pytest.raises(ValueError):
        SpaceTimeMesh(4, 4, 1.0, 2.0, 2, 0.1)
    mesh = SpaceTimeMesh(6, 3, 2.0, 1.0, 2, 0.1)
    assert mesh.h == pytest.approx(1.0 / 3.0)
    assert mesh.n_interior == 5 * 2
