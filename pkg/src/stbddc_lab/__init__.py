"""Space-time BDDC preconditioner laboratory."""

from .errors import (ConfigError, NoConvergence, NumericallySingular,
                     PicardStalled, SingularBlock, SingularCoarse,
                     SingularSchur, SizeCapExceeded, StructurallySingular)
from .fem import (PhysicsConfig, SpaceTimeMesh, element_matrices,
                  assemble_spatial_operators, plaplacian_viscosity, supg_tau)
from .linalg import (Factorization, GmresConfig, IterationReport,
                     dense_lu_factor, gmres_right_preconditioned,
                     sparse_lu_factor)
from .partition import (GeometricObject, ObjectSet, SpaceTimePartition,
                        build_space_constraints, build_spacetime_constraints,
                        classify_objects, global_coarse_numbering)
from .preconditioner import (SpaceTimeBddc, SubdomainOperator,
                             build_subdomain_operators)
from .problems import (SinusoidalSolution, SpaceTimeSystem, apply_monolithic,
                       plaplacian_physics, sinusoidal_physics)
from .solvers import (NonlinearConfig, SolveReport, solve_monolithic_direct,
                      solve_picard, solve_sequential, solve_spacetime)

__version__ = "0.1.0"
