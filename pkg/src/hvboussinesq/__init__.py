"""Finite-element solver for a Boussinesq system with nonmonotone boundary laws.

Time retardation decouples the flow and heat equations; the nonsmooth
friction and heat-flux laws are mollified and resolved by Picard iteration.
"""
__version__ = "0.1.0"

from .config import ConfigError, SimConfig, parse_config, scenario  # noqa: E402
from .integrator import H0Error, PicardError, SolverError, run  # noqa: E402

__all__ = [
    "ConfigError", "H0Error", "PicardError", "SimConfig", "SolverError",
    "__version__", "parse_config", "run", "scenario",
]
