"""Structured Q1 finite elements on scaled rectangles with SUPG stabilization.

The mesh is a uniform grid of square cells; all of the domain boundary
carries strong Dirichlet data, eliminated from the operators and folded into
the right-hand side.  Element integrals use 2x2 Gauss quadrature, which is
exact for every Q1 bilinear-form integrand on axis-aligned cells.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
import scipy.sparse as sp

Scalar = Union[float, int]
SpaceTimeFn = Union[Scalar, Callable]  # f(x, y, t) or a constant
SpaceFn = Union[Scalar, Callable]      # u0(x, y) or a constant

# reference cell [-1,1]^2, nodes counterclockwise from (-1,-1)
_REF_NODES = np.array([(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)])
_GP = 1.0 / math.sqrt(3.0)
_GAUSS = np.array([(-_GP, -_GP), (_GP, -_GP), (_GP, _GP), (-_GP, _GP)])


def _shape_values():
    """Q1 shape functions and reference gradients at the 2x2 Gauss points."""
    n = np.zeros((4, 4))       # (point, node)
    dxi = np.zeros((4, 4))
    deta = np.zeros((4, 4))
    for q, (xi, eta) in enumerate(_GAUSS):
        for a, (xa, ya) in enumerate(_REF_NODES):
            n[q, a] = 0.25 * (1 + xa * xi) * (1 + ya * eta)
            dxi[q, a] = 0.25 * xa * (1 + ya * eta)
            deta[q, a] = 0.25 * ya * (1 + xa * xi)
    return n, dxi, deta


_N, _DXI, _DETA = _shape_values()


def eval_spacetime(fn: SpaceTimeFn, x, y, t: float):
    if callable(fn):
        return np.asarray(fn(x, y, t), dtype=float)
    return np.full_like(np.asarray(x, dtype=float), float(fn))


def eval_space(fn: SpaceFn, x, y):
    if callable(fn):
        return np.asarray(fn(x, y), dtype=float)
    return np.full_like(np.asarray(x, dtype=float), float(fn))


@dataclass
class PhysicsConfig:
    """Coefficients, data, and stabilization switches for the CDR problem.

    ``nu`` is the (constant) diffusion for linear runs.  Setting ``nu0``/``p``
    activates the nonlinear viscosity ``nu0 * |grad u|**p``, linearized by the
    Picard driver; the per-element effective viscosity is then supplied to
    the assembly routines explicitly.
    """

    nu: float = 1.0
    beta: tuple[float, float] = (0.0, 0.0)
    sigma: float = 0.0
    forcing: SpaceTimeFn = 0.0
    dirichlet: SpaceTimeFn = 0.0
    initial: SpaceFn = 0.0
    supg: bool = False
    tau_strategy: str = "transient_rates"
    nu0: float | None = None
    p: float | None = None

    def __post_init__(self):
        if self.nonlinear:
            if self.nu0 <= 0 or (self.p is None or self.p < 0):
                raise ValueError("nonlinear viscosity needs nu0 > 0 and p >= 0")
        else:
            if self.nu < 0 or self.sigma < 0:
                raise ValueError("nu and sigma must be nonnegative")
            if self.nu == 0 and not (self.supg and self.beta_norm > 0):
                raise ValueError(
                    "nu = 0 requires SUPG with a nonzero velocity")

    @property
    def nonlinear(self) -> bool:
        return self.nu0 is not None

    @property
    def beta_norm(self) -> float:
        return math.hypot(self.beta[0], self.beta[1])


class SpaceTimeMesh:
    """Uniform Q1 grid on [0, lx] x [0, ly] with K uniform time steps on (0, T].

    Nodes are numbered row-major (x fastest); every boundary node is a
    Dirichlet node.
    """

    def __init__(self, nx: int, ny: int, lx: float, ly: float,
                 steps: int, t_final: float):
        if nx < 1 or ny < 1 or steps < 1:
            raise ValueError("mesh needs at least one cell and one time step")
        hx, hy = lx / nx, ly / ny
        if abs(hx - hy) > 1e-12 * max(hx, hy):
            raise ValueError(f"cells must be square, got hx={hx}, hy={hy}")
        self.nx, self.ny = nx, ny
        self.lx, self.ly = float(lx), float(ly)
        self.h = hx
        self.steps = steps
        self.t_final = float(t_final)
        self.delta = self.t_final / steps

        self.n_nodes = (nx + 1) * (ny + 1)
        self.n_cells = nx * ny
        ii, jj = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1))
        self.node_x = (ii * self.h).ravel()
        self.node_y = (jj * self.h).ravel()

        ci, cj = np.meshgrid(np.arange(nx), np.arange(ny))
        ci, cj = ci.ravel(), cj.ravel()
        base = cj * (nx + 1) + ci
        # counterclockwise: (i,j), (i+1,j), (i+1,j+1), (i,j+1)
        self.cells = np.stack(
            [base, base + 1, base + nx + 2, base + nx + 1], axis=1)

        bmask = np.zeros(self.n_nodes, dtype=bool)
        bmask[(ii == 0).ravel() | (ii == nx).ravel()
              | (jj == 0).ravel() | (jj == ny).ravel()] = True
        self.dirichlet_mask = bmask
        self.boundary_nodes = np.nonzero(bmask)[0]
        self.interior_nodes = np.nonzero(~bmask)[0]
        self.n_interior = self.interior_nodes.size
        self.interior_index = np.full(self.n_nodes, -1, dtype=np.int64)
        self.interior_index[self.interior_nodes] = np.arange(self.n_interior)

    def node_id(self, i: int, j: int) -> int:
        return j * (self.nx + 1) + i

    def cell_id(self, i: int, j: int) -> int:
        return j * self.nx + i

    def times(self) -> np.ndarray:
        """Time grid t^1 .. t^K (the unknown steps)."""
        return self.delta * np.arange(1, self.steps + 1)

    def cell_barycenters(self):
        xc = self.node_x[self.cells].mean(axis=1)
        yc = self.node_y[self.cells].mean(axis=1)
        return xc, yc

    def gauss_points(self):
        """Physical Gauss-point coordinates, shape (n_cells, 4)."""
        x0 = self.node_x[self.cells[:, 0]]
        y0 = self.node_y[self.cells[:, 0]]
        gx = x0[:, None] + (1.0 + _GAUSS[:, 0]) * self.h / 2.0
        gy = y0[:, None] + (1.0 + _GAUSS[:, 1]) * self.h / 2.0
        return gx, gy


def supg_tau(h: float, nu, beta_norm: float, sigma: float, delta: float,
             strategy: str = "transient_rates"):
    """Per-element SUPG stabilization parameter.

    The default combines the transient, diffusive, convective, and reaction
    rates as tau = (1/delta + 4 nu/h^2 + 2|beta|/h + sigma)^{-1}; the
    classical steady coth rule is available as ``strategy="coth"``.
    """
    if h <= 0 or delta <= 0:
        raise ValueError("h and delta must be positive")
    nu = np.asarray(nu, dtype=float)
    if strategy == "transient_rates":
        return 1.0 / (1.0 / delta + 4.0 * nu / h**2
                      + 2.0 * beta_norm / h + sigma)
    if strategy == "coth":
        if beta_norm == 0:
            return np.zeros_like(nu)
        pe = beta_norm * h / (2.0 * np.maximum(nu, 1e-300))
        return h / (2.0 * beta_norm) * (1.0 / np.tanh(pe) - 1.0 / pe)
    raise ValueError(f"unknown SUPG strategy {strategy!r}")


class ElementBlocks:
    """The five 4x4 integrals every element matrix is a combination of.

    mass[i,j]      = int phi_j phi_i
    diffusion[i,j] = int grad phi_j . grad phi_i
    convection[i,j]= int (beta.grad phi_j) phi_i
    streamline_mass[i,j] = int phi_j (beta.grad phi_i)
    streamline[i,j]      = int (beta.grad phi_j)(beta.grad phi_i)
    """

    def __init__(self, h: float, beta: tuple[float, float]):
        if h <= 0:
            raise ValueError("cell size must be positive")
        wdet = np.full(4, h * h / 4.0)  # unit Gauss weights * |J|
        dndx = _DXI * (2.0 / h)
        dndy = _DETA * (2.0 / h)
        bgrad = beta[0] * dndx + beta[1] * dndy  # (point, node)
        self.h = h
        self.mass = np.einsum("q,qi,qj->ij", wdet, _N, _N)
        self.diffusion = (np.einsum("q,qi,qj->ij", wdet, dndx, dndx)
                          + np.einsum("q,qi,qj->ij", wdet, dndy, dndy))
        self.convection = np.einsum("q,qi,qj->ij", wdet, _N, bgrad)
        self.streamline_mass = np.einsum("q,qi,qj->ij", wdet, bgrad, _N)
        self.streamline = np.einsum("q,qi,qj->ij", wdet, bgrad, bgrad)
        # test functions (rows) for load integration, per Gauss point
        self.test_vals = wdet[:, None] * _N                # (point, node)
        self.test_streamline = wdet[:, None] * bgrad


@dataclass
class ElementMatrices:
    """Mass and stiffness contributions of one element, SUPG included."""

    m: np.ndarray
    k: np.ndarray
    tau: float = 0.0


def element_matrices(h: float, physics: PhysicsConfig, delta: float,
                     nu_eff: float | None = None) -> ElementMatrices:
    """Element matrices for one square cell of side ``h``.

    ``nu_eff`` overrides the physics viscosity (used by the Picard
    linearization).  With SUPG enabled the stabilization of the discrete time
    derivative lands in ``m`` and the remaining terms in ``k``, so downstream
    assembly only ever sees two matrices per element.
    """
    nu = physics.nu if nu_eff is None else float(nu_eff)
    blocks = ElementBlocks(h, physics.beta)
    tau = 0.0
    if physics.supg:
        tau = float(supg_tau(h, nu, physics.beta_norm, physics.sigma, delta,
                             physics.tau_strategy))
    m = blocks.mass + tau * blocks.streamline_mass
    k = (nu * blocks.diffusion + blocks.convection + physics.sigma * blocks.mass
         + tau * (blocks.streamline + physics.sigma * blocks.streamline_mass))
    return ElementMatrices(m=m, k=k, tau=tau)


def _element_coefficients(mesh, physics: PhysicsConfig, nu_eff):
    """Per-element viscosity and SUPG tau arrays."""
    if nu_eff is None:
        nu = np.full(mesh.n_cells, physics.nu)
    else:
        nu = np.asarray(nu_eff, dtype=float)
        if nu.shape != (mesh.n_cells,):
            raise ValueError("nu_eff must have one value per element")
    if physics.supg:
        tau = supg_tau(mesh.h, nu, physics.beta_norm, physics.sigma,
                       mesh.delta, physics.tau_strategy)
    else:
        tau = np.zeros(mesh.n_cells)
    return nu, tau


def _assemble_full(mesh: SpaceTimeMesh, physics: PhysicsConfig, nu_eff,
                   cells: np.ndarray | None = None):
    """COO-assembled (M, K) over all mesh nodes, restricted to ``cells``."""
    blocks = ElementBlocks(mesh.h, physics.beta)
    nu, tau = _element_coefficients(mesh, physics, nu_eff)
    if cells is None:
        cells = np.arange(mesh.n_cells)
    nu, tau = nu[cells], tau[cells]
    conn = mesh.cells[cells]

    ones = np.ones(cells.size)
    mvals = (np.outer(ones, blocks.mass.ravel())
             + np.outer(tau, blocks.streamline_mass.ravel()))
    kvals = (np.outer(nu, blocks.diffusion.ravel())
             + np.outer(ones, blocks.convection.ravel()
                        + physics.sigma * blocks.mass.ravel())
             + np.outer(tau, blocks.streamline.ravel()
                        + physics.sigma * blocks.streamline_mass.ravel()))
    rows = np.repeat(conn, 4, axis=1).ravel()
    cols = np.tile(conn, (1, 4)).ravel()
    shape = (mesh.n_nodes, mesh.n_nodes)
    m = sp.coo_matrix((mvals.ravel(), (rows, cols)), shape=shape).tocsr()
    k = sp.coo_matrix((kvals.ravel(), (rows, cols)), shape=shape).tocsr()
    return m, k


@dataclass
class SpatialOperators:
    """Assembled spatial operators split into interior and boundary blocks."""

    m: sp.csr_matrix        # interior x interior
    k: sp.csr_matrix
    m_ib: sp.csr_matrix     # interior x boundary (Dirichlet coupling)
    k_ib: sp.csr_matrix
    interior_nodes: np.ndarray = field(repr=False, default=None)
    boundary_nodes: np.ndarray = field(repr=False, default=None)


def assemble_spatial_operators(mesh: SpaceTimeMesh, physics: PhysicsConfig,
                               nu_eff=None) -> SpatialOperators:
    """Assemble mass/stiffness on interior DOFs with Dirichlet elimination.

    Boundary rows and columns are removed from the operators; the
    interior-boundary coupling blocks are returned so nonzero boundary data
    can be folded into the right-hand side.
    """
    m, k = _assemble_full(mesh, physics, nu_eff)
    i, b = mesh.interior_nodes, mesh.boundary_nodes
    return SpatialOperators(
        m=m[i][:, i].tocsr(), k=k[i][:, i].tocsr(),
        m_ib=m[i][:, b].tocsr(), k_ib=k[i][:, b].tocsr(),
        interior_nodes=i, boundary_nodes=b)


def assemble_on_nodes(mesh: SpaceTimeMesh, physics: PhysicsConfig,
                      cells: np.ndarray, nodes: np.ndarray, nu_eff=None):
    """Neumann-style (M, K) over a cell patch, restricted to ``nodes``.

    Used for the per-subdomain sub-assembled operators: ``nodes`` is the
    subdomain closure minus Dirichlet nodes, and no inter-subdomain assembly
    takes place because only the patch's own elements contribute.
    """
    m, k = _assemble_full(mesh, physics, nu_eff, cells=cells)
    return m[nodes][:, nodes].tocsr(), k[nodes][:, nodes].tocsr()


def load_vector(mesh: SpaceTimeMesh, physics: PhysicsConfig, t: float,
                nu_eff=None) -> np.ndarray:
    """Forcing load over all nodes at time ``t`` (SUPG-perturbed test space)."""
    blocks = ElementBlocks(mesh.h, physics.beta)
    _, tau = _element_coefficients(mesh, physics, nu_eff)
    gx, gy = mesh.gauss_points()
    fvals = eval_spacetime(physics.forcing, gx, gy, t)  # (cells, points)
    contrib = fvals @ blocks.test_vals
    if physics.supg:
        contrib = contrib + tau[:, None] * (fvals @ blocks.test_streamline)
    out = np.zeros(mesh.n_nodes)
    np.add.at(out, mesh.cells.ravel(), contrib.ravel())
    return out


def plaplacian_viscosity(u_nodes: np.ndarray, mesh: SpaceTimeMesh,
                         nu0: float, p: float) -> np.ndarray:
    """Effective viscosity nu0*|grad u|^p at element barycenters.

    ``u_nodes`` holds the full nodal vector (boundary values included) of one
    time level.  A vanishing gradient with p > 0 yields zero viscosity, which
    is allowed: the mass term keeps the time-step blocks nonsingular.
    """
    u = u_nodes[mesh.cells]  # (cells, 4)
    gx = (u[:, 1] - u[:, 0] + u[:, 2] - u[:, 3]) / (2.0 * mesh.h)
    gy = (u[:, 3] - u[:, 0] + u[:, 2] - u[:, 1]) / (2.0 * mesh.h)
    mag2 = gx * gx + gy * gy
    if p == 0:
        return np.full(mesh.n_cells, float(nu0))
    return nu0 * mag2 ** (p / 2.0)


def l2_error(mesh: SpaceTimeMesh, u_nodes: np.ndarray, exact: Callable,
             t: float) -> float:
    """L2(Omega) norm of u_h - exact at time ``t`` by element quadrature."""
    gx, gy = mesh.gauss_points()
    uh = u_nodes[mesh.cells] @ _N.T  # (cells, points)
    diff = uh - eval_spacetime(exact, gx, gy, t)
    wdet = mesh.h * mesh.h / 4.0
    return math.sqrt(float(np.sum(diff * diff) * wdet))
