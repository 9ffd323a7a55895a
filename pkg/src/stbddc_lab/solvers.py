"""Problem-level drivers: one-shot space-time solve, sequential baseline,
Picard loop for the nonlinear viscosity, and the monolithic direct oracle."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import NoConvergence, PicardStalled, SizeCapExceeded
from .fem import (PhysicsConfig, SpaceTimeMesh, eval_space,
                  eval_spacetime, plaplacian_viscosity)
from .linalg import GmresConfig, gmres_right_preconditioned, sparse_lu_factor
from .partition import SpaceTimePartition
from .preconditioner import SpaceTimeBddc
from .problems import SpaceTimeSystem

log = logging.getLogger(__name__)

DIRECT_DOF_CAP = 200_000


@dataclass
class NonlinearConfig:
    """Picard settings for the solution-dependent viscosity."""

    relaxation: float = 0.75
    tolerance: float = 1e-3
    max_iterations: int = 30
    stall_window: int = 5

    def __post_init__(self):
        if not 0.0 < self.relaxation <= 1.0:
            raise ValueError("relaxation must lie in (0, 1]")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")


@dataclass
class SolveReport:
    """Iteration counts, residual histories, and run metadata of one solve."""

    iterations: int = 0
    iterations_per_step: list[int] = field(default_factory=list)
    picard_iterations: int = 0
    residual_norms: list[float] = field(default_factory=list)
    nonlinear_residuals: list[float] = field(default_factory=list)
    converged: bool = True
    setup_seconds: float = 0.0
    solve_seconds: float = 0.0
    local_solves: int = 0
    n_subdomains: int = 1
    cfl_convective: float = 0.0
    cfl_diffusive: float = 0.0
    peclet: float = float("inf")
    error_l2: float | None = None

    @property
    def local_solves_per_subdomain(self) -> float:
        return self.local_solves / max(1, self.n_subdomains)

    def fill_metadata(self, mesh: SpaceTimeMesh, physics: PhysicsConfig,
                      partition: SpaceTimePartition | None = None):
        nu = physics.nu0 if physics.nonlinear else physics.nu
        bnorm = physics.beta_norm
        self.cfl_convective = bnorm * mesh.delta / mesh.h
        self.cfl_diffusive = nu * mesh.delta / mesh.h**2
        self.peclet = (bnorm * mesh.h / (2.0 * nu)) if nu > 0 else float("inf")
        if partition is not None:
            self.n_subdomains = partition.n_subdomains


def solve_spacetime(mesh: SpaceTimeMesh, partition: SpaceTimePartition,
                    physics: PhysicsConfig, cfg: GmresConfig | None = None,
                    nu_eff=None, exact=None, system: SpaceTimeSystem | None = None,
                    **bddc_options):
    """Solve all time steps in one shot with BDDC-preconditioned GMRES.

    The Krylov start vector is the interior correction of the right-hand
    side.  Extra keyword arguments configure the preconditioner (constraint
    variant, interior solver, thread count, ...).
    """
    cfg = cfg or GmresConfig()
    t0 = time.perf_counter()
    system = system or SpaceTimeSystem(mesh, physics, nu_eff)
    precond = SpaceTimeBddc(system, partition, **bddc_options)
    t1 = time.perf_counter()

    rhs = system.rhs_flat()
    x0 = precond.initial_guess()
    x, rep = gmres_right_preconditioned(system.apply, precond.apply, rhs,
                                        x0=x0, cfg=cfg)
    t2 = time.perf_counter()

    report = SolveReport(iterations=rep.iterations, converged=rep.converged,
                         residual_norms=rep.residual_norms,
                         setup_seconds=t1 - t0, solve_seconds=t2 - t1,
                         local_solves=precond.stats.local_solves)
    report.fill_metadata(mesh, physics, partition)
    if exact is not None:
        report.error_l2 = system.final_l2_error(x, exact)
    if not rep.converged:
        log.warning("space-time solve stopped at %d iterations without "
                    "reaching tolerance", rep.iterations)
    return x.reshape(system.shape), report


def solve_sequential(mesh: SpaceTimeMesh, partition: SpaceTimePartition,
                     physics: PhysicsConfig, cfg: GmresConfig | None = None,
                     nu_eff=None, exact=None,
                     system: SpaceTimeSystem | None = None, **bddc_options):
    """March the time steps, solving each spatial problem with space BDDC.

    Only the spatial part of ``partition`` is used.  Each step starts from
    the previous step's solution and its spatial system is preconditioned by
    the object-constraint BDDC; with constant physics one preconditioner is
    reused for every step.
    """
    cfg = cfg or GmresConfig()
    t0 = time.perf_counter()
    system = system or SpaceTimeSystem(mesh, physics, nu_eff)
    spatial_partition = SpaceTimePartition(
        _one_step_mesh(mesh), partition.px, partition.py, 1)

    precond = None
    total_solve = 0.0
    u = np.zeros(system.shape)
    prev = np.zeros(mesh.n_interior)
    report = SolveReport()
    setup = 0.0
    for step in range(1, mesh.steps + 1):
        ts = time.perf_counter()
        if precond is None:
            step_system = _one_step_system(system, step)
            precond = SpaceTimeBddc(step_system, spatial_partition,
                                    constraint_mode="space", **bddc_options)
        setup += time.perf_counter() - ts

        b = system.rhs[step - 1] + system.m @ prev
        ts = time.perf_counter()
        x, rep = gmres_right_preconditioned(
            precond.system.apply, precond.apply, b, x0=prev.copy(), cfg=cfg)
        total_solve += time.perf_counter() - ts
        if not rep.converged:
            raise NoConvergence(
                f"sequential solve failed at step {step} after "
                f"{rep.iterations} iterations")
        report.iterations += rep.iterations
        report.iterations_per_step.append(rep.iterations)
        report.residual_norms.extend(rep.residual_norms)
        u[step - 1] = x
        prev = x
        report.local_solves += precond.stats.local_solves
        precond.stats.local_solves = 0
        if system.nu_eff is not None:
            precond = None  # stiffness changes with the step

    report.setup_seconds = (time.perf_counter() - t0) - total_solve
    report.solve_seconds = total_solve
    report.fill_metadata(mesh, physics, partition)
    report.n_subdomains = spatial_partition.n_space
    if exact is not None:
        report.error_l2 = system.final_l2_error(u, exact)
    return u, report


def _one_step_mesh(mesh: SpaceTimeMesh) -> SpaceTimeMesh:
    return SpaceTimeMesh(mesh.nx, mesh.ny, mesh.lx, mesh.ly, 1, mesh.delta)


def _one_step_system(system: SpaceTimeSystem, step: int) -> SpaceTimeSystem:
    """Single-step spatial system sharing the full system's operators."""
    mesh = system.mesh
    nu = None if system.nu_eff is None else system.nu_eff[:, step - 1]
    return SpaceTimeSystem(_one_step_mesh(mesh), system.physics, nu)


def solve_monolithic_direct(mesh: SpaceTimeMesh, physics: PhysicsConfig,
                            nu_eff=None, exact=None,
                            system: SpaceTimeSystem | None = None,
                            dof_cap: int = DIRECT_DOF_CAP):
    """Assemble the full block-bidiagonal matrix and solve it by sparse LU.

    The verification oracle for every equivalence test; refuses to run above
    ``dof_cap`` space-time unknowns.
    """
    system = system or SpaceTimeSystem(mesh, physics, nu_eff)
    n = mesh.steps * mesh.n_interior
    if n > dof_cap:
        raise SizeCapExceeded(f"{n} space-time DOFs exceed the cap {dof_cap}")
    t0 = time.perf_counter()
    lu = sparse_lu_factor(system.monolithic_matrix())
    u = lu.solve(system.rhs_flat())
    report = SolveReport(setup_seconds=0.0, solve_seconds=time.perf_counter() - t0)
    report.fill_metadata(mesh, physics)
    if exact is not None:
        report.error_l2 = system.final_l2_error(u, exact)
    return u.reshape(system.shape), report


def _nonlinear_viscosity(mesh: SpaceTimeMesh, physics: PhysicsConfig,
                         u: np.ndarray) -> np.ndarray:
    """Per-element, per-step effective viscosity from the current iterate."""
    bx, by = mesh.node_x[mesh.boundary_nodes], mesh.node_y[mesh.boundary_nodes]
    nu = np.empty((mesh.n_cells, mesh.steps))
    full = np.zeros(mesh.n_nodes)
    for step in range(1, mesh.steps + 1):
        t = step * mesh.delta
        full[mesh.interior_nodes] = u[step - 1]
        full[mesh.boundary_nodes] = eval_spacetime(physics.dirichlet, bx, by, t)
        nu[:, step - 1] = plaplacian_viscosity(full, mesh, physics.nu0,
                                               physics.p)
    return nu


def solve_picard(mesh: SpaceTimeMesh, partition: SpaceTimePartition,
                 physics: PhysicsConfig, nonlinear: NonlinearConfig | None = None,
                 cfg: GmresConfig | None = None, mode: str = "spacetime",
                 exact=None, **bddc_options):
    """Fixed-point loop for the nonlinear viscosity with iterate relaxation.

    Each sweep freezes the viscosity at the current iterate, solves the
    linear space-time system (one-shot or sequentially, per ``mode``), and
    relaxes the full space-time iterate.  Convergence is declared on the
    algebraic norm of the space-time nonlinear residual.
    """
    if not physics.nonlinear:
        raise ValueError("solve_picard needs a nonlinear physics config")
    nonlinear = nonlinear or NonlinearConfig()
    cfg = cfg or GmresConfig()
    driver = {"spacetime": solve_spacetime, "sequential": solve_sequential}[mode]

    t0 = time.perf_counter()
    u = np.zeros((mesh.steps, mesh.n_interior))
    # start from the initial condition held constant in time
    ix, iy = mesh.node_x[mesh.interior_nodes], mesh.node_y[mesh.interior_nodes]
    u[:] = eval_space(physics.initial, ix, iy)
    report = SolveReport()
    best = np.inf
    since_best = 0
    for sweep in range(1, nonlinear.max_iterations + 1):
        nu_eff = _nonlinear_viscosity(mesh, physics, u)
        system = SpaceTimeSystem(mesh, physics, nu_eff)
        u_star, rep = driver(mesh, partition, physics, cfg=cfg, nu_eff=nu_eff,
                             system=system, **bddc_options)
        u = nonlinear.relaxation * u_star + (1.0 - nonlinear.relaxation) * u
        report.iterations += rep.iterations
        report.local_solves += rep.local_solves
        report.picard_iterations = sweep

        res_system = SpaceTimeSystem(mesh, physics,
                                     _nonlinear_viscosity(mesh, physics, u))
        residual = float(np.linalg.norm(
            res_system.apply(u.ravel()) - res_system.rhs_flat()))
        report.nonlinear_residuals.append(residual)
        log.info("picard sweep %d: nonlinear residual %.3e (%d linear its)",
                 sweep, residual, rep.iterations)
        if residual < nonlinear.tolerance:
            break
        if residual < best - 1e-16:
            best, since_best = residual, 0
        else:
            since_best += 1
            if since_best >= nonlinear.stall_window:
                raise PicardStalled(
                    f"nonlinear residual stuck near {best:.3e} for "
                    f"{since_best} sweeps")
    else:
        report.converged = False

    report.solve_seconds = time.perf_counter() - t0
    report.fill_metadata(mesh, physics, partition)
    if exact is not None:
        report.error_l2 = res_system.final_l2_error(u, exact)
    return u, report
