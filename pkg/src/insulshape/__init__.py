"""Optimal insulation shapes: nonlocal Robin FEM, shape gradients and rough-domain diagnostics."""

from .errors import *  # noqa: F401,F403
from .geometry import Mesh, StarBoundary, annulus_mesh, parse_mesh, parse_star, square_mesh, triangulate
from .fem import assemble, solve_insulation_eps, solve_insulation_linear
from .energy import analytic_annulus, analytic_ball, ball_energy, optimal_h
from .grid import GridDomain, rasterize

__version__ = "0.1.0"
