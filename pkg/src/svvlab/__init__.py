"""Simulation and verification toolkit for sandwiched Volterra volatility models."""

import os

# numba otherwise probes TBB first and warns about the system version
os.environ.setdefault("NUMBA_THREADING_LAYER_PRIORITY", "omp workqueue tbb")

from .volterra import KernelSpec, TimeGrid, kernel_eval, cell_weights, holder_certificate, limit_constant  # noqa: E402
from .sandwich import (  # noqa: E402
    AFunction,
    BoundFunctions,
    SandwichDrift,
    SandwichModel,
    TimeFunction,
    drift_eval,
    implicit_step,
    simulate_path,
    simulate_paths,
)

__version__ = "0.1.0"
