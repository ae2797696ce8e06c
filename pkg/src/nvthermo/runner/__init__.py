"""Reproducible scenario runs built from the simulation modules."""
from .config import ConfigError, load_config, resolve
from .run import run_scenario

__all__ = ["ConfigError", "load_config", "resolve", "run_scenario"]
