"""Discrete space-time systems, right-hand sides, and problem presets."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fem import (PhysicsConfig, SpaceTimeMesh, SpatialOperators,
                  assemble_spatial_operators, eval_space, eval_spacetime,
                  l2_error, load_vector)


def apply_monolithic(m: sp.csr_matrix, k: sp.csr_matrix, delta: float,
                     u: np.ndarray) -> np.ndarray:
    """Apply the block lower-bidiagonal space-time operator to ``u``.

    ``u`` has one spatial block per time step (the zero initial condition is
    implicit); block j of the result is M(u^j - u^{j-1}) + delta*K u^j.  No
    matrix for the full space-time operator is ever formed.
    """
    u = np.asarray(u)
    if u.ndim != 2:
        raise ValueError("expected (steps, interior) blocks")
    out = (m @ u.T).T + delta * (k @ u.T).T
    out[1:] -= (m @ u[:-1].T).T
    return out


class SpaceTimeSystem:
    """Backward-Euler space-time system on interior DOFs.

    Holds the spatial blocks (one stiffness per step when the viscosity is
    solution-dependent), the assembled right-hand side with Dirichlet and
    initial data folded in, and the matrix-free operator application.
    """

    def __init__(self, mesh: SpaceTimeMesh, physics: PhysicsConfig,
                 nu_eff=None):
        self.mesh = mesh
        self.physics = physics
        steps, delta = mesh.steps, mesh.delta
        if nu_eff is not None:
            nu_eff = np.asarray(nu_eff, dtype=float)
            if nu_eff.ndim == 1:  # same effective viscosity at every step
                nu_eff = np.repeat(nu_eff[:, None], steps, axis=1)
            if nu_eff.shape != (mesh.n_cells, steps):
                raise ValueError("nu_eff must be (n_cells,) or (n_cells, steps)")
            if physics.supg and physics.beta_norm > 0:
                # per-step SUPG corrections to the mass matrix would make the
                # time-coupling blocks step-dependent; no benchmark needs it
                raise ValueError(
                    "per-step viscosity with convective SUPG is unsupported")
        self.nu_eff = nu_eff

        if self.nu_eff is None:
            ops = assemble_spatial_operators(mesh, physics)
            self._ops = [ops] * steps
        else:
            self._ops = [assemble_spatial_operators(mesh, physics,
                                                    self.nu_eff[:, j])
                         for j in range(steps)]
        self.m = self._ops[0].m
        self.n_interior = mesh.n_interior
        self.shape = (steps, self.n_interior)

        bx, by = mesh.node_x[mesh.boundary_nodes], mesh.node_y[mesh.boundary_nodes]
        ix, iy = mesh.node_x[mesh.interior_nodes], mesh.node_y[mesh.interior_nodes]
        g_prev = eval_spacetime(physics.dirichlet, bx, by, 0.0)
        u0 = eval_space(physics.initial, ix, iy)
        self._boundary_at = lambda t: eval_spacetime(physics.dirichlet, bx, by, t)

        rhs = np.zeros(self.shape)
        for j, t in enumerate(mesh.times()):
            op = self._ops[j]
            nu_j = None if self.nu_eff is None else self.nu_eff[:, j]
            g = self._boundary_at(t)
            rhs[j] = (delta * load_vector(mesh, physics, t, nu_j)[mesh.interior_nodes]
                      - op.m_ib @ (g - g_prev) - delta * (op.k_ib @ g))
            g_prev = g
        rhs[0] += self._ops[0].m @ u0
        self.rhs = rhs
        self.initial_interior = u0

    def k_at(self, step: int) -> sp.csr_matrix:
        """Stiffness for 1-based time step ``step``."""
        return self._ops[step - 1].k

    def ops_at(self, step: int) -> SpatialOperators:
        return self._ops[step - 1]

    def nu_at(self, step: int):
        return None if self.nu_eff is None else self.nu_eff[:, step - 1]

    def apply(self, u: np.ndarray) -> np.ndarray:
        """Matrix-free application of the assembled space-time operator."""
        u = u.reshape(self.shape)
        if self.nu_eff is None:
            out = apply_monolithic(self.m, self._ops[0].k, self.mesh.delta, u)
        else:
            out = (self.m @ u.T).T
            out[1:] -= (self.m @ u[:-1].T).T
            for j in range(self.mesh.steps):
                out[j] += self.mesh.delta * (self._ops[j].k @ u[j])
        return out.ravel()

    def apply_transpose(self, u: np.ndarray) -> np.ndarray:
        """Application of the transposed operator (block upper bidiagonal)."""
        u = u.reshape(self.shape)
        mt = self.m.T
        out = (mt @ u.T).T
        out[:-1] -= (mt @ u[1:].T).T
        for j in range(self.mesh.steps):
            out[j] += self.mesh.delta * (self._ops[j].k.T @ u[j])
        return out.ravel()

    def rhs_flat(self) -> np.ndarray:
        return self.rhs.ravel()

    def monolithic_matrix(self) -> sp.csr_matrix:
        """The full block-bidiagonal matrix, for the direct oracle."""
        steps = self.mesh.steps
        blocks = [[None] * steps for _ in range(steps)]
        for j in range(steps):
            blocks[j][j] = self.m + self.mesh.delta * self._ops[j].k
            if j > 0:
                blocks[j][j - 1] = -self.m
        return sp.bmat(blocks, format="csr")

    def full_nodal(self, u_interior: np.ndarray, t: float) -> np.ndarray:
        """Expand one interior block to all nodes using the Dirichlet data."""
        out = np.zeros(self.mesh.n_nodes)
        out[self.mesh.interior_nodes] = u_interior
        out[self.mesh.boundary_nodes] = self._boundary_at(t)
        return out

    def final_l2_error(self, u: np.ndarray, exact) -> float:
        u = u.reshape(self.shape)
        t = self.mesh.t_final
        return l2_error(self.mesh, self.full_nodal(u[-1], t), exact, t)


@dataclass
class SinusoidalSolution:
    """Separable manufactured solution sin(pi x) sin(pi y) sin(pi t).

    It vanishes on the boundary of any integer-scaled square and at t = 0,
    so Dirichlet data and the initial condition are both zero.  The forcing
    is obtained from hard-coded derivatives of the sinusoidal form.
    """

    def __call__(self, x, y, t):
        return np.sin(np.pi * x) * np.sin(np.pi * y) * math.sin(math.pi * t)

    def forcing(self, nu: float, beta=(0.0, 0.0), sigma: float = 0.0):
        def f(x, y, t):
            sx, cx = np.sin(np.pi * x), np.cos(np.pi * x)
            sy, cy = np.sin(np.pi * y), np.cos(np.pi * y)
            st, ct = math.sin(math.pi * t), math.cos(math.pi * t)
            return (np.pi * sx * sy * ct
                    + nu * 2.0 * np.pi**2 * sx * sy * st
                    + beta[0] * np.pi * cx * sy * st
                    + beta[1] * np.pi * sx * cy * st
                    + sigma * sx * sy * st)
        return f


def sinusoidal_physics(nu: float = 1.0, beta=(0.0, 0.0), sigma: float = 0.0,
                       supg: bool = False):
    """Physics whose exact solution is the sinusoidal manufactured field."""
    exact = SinusoidalSolution()
    physics = PhysicsConfig(nu=nu, beta=tuple(beta), sigma=sigma,
                            forcing=exact.forcing(nu, beta, sigma), supg=supg)
    return physics, exact


def plaplacian_physics(nu0: float = 1.0, p: float = 1.0):
    """Transient p-Laplacian benchmark: u0 = g = x + y, f = 1."""
    linear = lambda x, y, t=None: x + y
    return PhysicsConfig(nu=0.0, beta=(0.0, 0.0), sigma=0.0, forcing=1.0,
                         dirichlet=linear, initial=lambda x, y: x + y,
                         nu0=nu0, p=p)
