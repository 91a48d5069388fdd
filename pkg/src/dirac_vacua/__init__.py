"""Numerical in/out vacuum states for Dirac fields on asymptotically static 1+1 spacetimes."""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .geometry import GridSpec, MetricFamily, make_family, reduce_family, verify_decay  # noqa: F401
from .spin_algebra import CliffordRep, make_clifford  # noqa: F401
from .operator_assembly import Gram, ReducedModel, assemble_H, assemble_H_asymptotic  # noqa: F401
from .evolution import Propagator, StepperConfig  # noqa: F401
from .moller_scattering import (ScatteringResult, cook_accelerated_limit,  # noqa: F401
                                lift_to_physical, moller_projection)
from .states_hadamard import (StateCovariances, cauchy_covariances,  # noqa: F401
                              hadamard_symbol_test, static_vacuum)
