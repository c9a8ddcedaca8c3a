"""Taylor-Hood finite elements on structured meshes of the unit square."""

from .linalg import Factorization, SingularMatrix, SolverCounters, lu_factor, solve_many
from .mesh import Mesh, generate_mesh
from .spaces import TaylorHood, build_spaces, inf_sup_constant

__all__ = [
    "Factorization", "Mesh", "SingularMatrix", "SolverCounters", "TaylorHood",
    "build_spaces", "generate_mesh", "inf_sup_constant", "lu_factor", "solve_many",
]
