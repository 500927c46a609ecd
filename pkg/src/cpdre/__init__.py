"""Contact process in a dynamic random environment: graphical-representation simulator,
dual process, exact small-lattice oracle and survival estimators."""

from .dual import DualRun, coupled_duality_estimate, run_dual
from .forward import FaceWindow, Trajectory, count_n_plus, evolve, evolve_environment_only, pack_points, state_at
from .lattice import (Configuration, Geometry, InitialLaw, Params, SiteState, equilibrium_density, leq,
                      sample_initial)
from .tableau import Event, EventKind, EventTableau, generate, splice, thin_arrows

__version__ = "0.1.0"

__all__ = [
    "Configuration", "DualRun", "Event", "EventKind", "EventTableau", "FaceWindow", "Geometry", "InitialLaw",
    "Params", "SiteState", "Trajectory", "count_n_plus", "coupled_duality_estimate", "equilibrium_density",
    "evolve", "evolve_environment_only", "generate", "leq", "pack_points", "run_dual", "sample_initial",
    "splice", "state_at", "thin_arrows",
]
