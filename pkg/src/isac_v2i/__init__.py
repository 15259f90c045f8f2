"""Predictive beamforming for vehicle-to-infrastructure ISAC with an extended vehicle target."""

from .config import ConfigError, SimConfig, load_config, parse_config
from .montecarlo import SCHEMES, run_monte_carlo, velocity_sweep

__all__ = ["ConfigError", "SimConfig", "load_config", "parse_config", "SCHEMES",
           "run_monte_carlo", "velocity_sweep"]
__version__ = "0.1.0"
