"""Lattice simulator for the screened scalar sedimentation corrector."""
__version__ = "0.1.0"

from .errors import (BudgetExceededError, DegenerateGeometryError, EnsembleError, GeometryError,
                     InvalidParameterError, NonConvergenceError, PreconditionError, ResourceError,
                     SedlabError, UndefinedStatisticError)
from .pointgen import (PointSet, StopRule, estimate_jamming, min_pairwise_distance,
                       penrose_accept, sample_hardcore_poisson, sample_poisson_marks,
                       sample_random_parking)
from .lattice import Geometry, Grid, rasterize, unit_ball_radius
from .solver import OperatorSpec, assemble_rhs, green_function, identity_defects, solve_corrector
from .ensemble import RunConfig, fit_scaling, run_ensemble, sweep_T

__all__ = [n for n in dir() if not n.startswith("_")]
