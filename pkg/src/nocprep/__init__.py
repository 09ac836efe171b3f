"""Neighboring-optimal-control Bell-state preparation with twisted rapid passage."""

__version__ = "0.1.0"

from .dynamics import ANNEAL_START, TABLE1, TrpParams, nominal_run  # noqa: E402
from .kernel import BACKEND  # noqa: E402
from .noc import NocWeights, solve_noc  # noqa: E402

__all__ = ["ANNEAL_START", "BACKEND", "NocWeights", "TABLE1", "TrpParams", "nominal_run",
           "solve_noc", "__version__"]
