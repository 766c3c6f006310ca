"""
Star-BDI Configuration Module

Manages run-time defaults for the star-graph birth-death-immigration toolkit:
series truncation policy, grid sizes, Monte Carlo chunking and logging.
Values come from environment variables (prefix STAR_BDI_) or a local .env file.
"""

import sys
import logging
from functools import lru_cache
from typing import Dict, Any, Optional

from pydantic_settings import BaseSettings, SettingsConfigDict

# Configure logger for this module
logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

# Transient-law method registry
SUPPORTED_METHODS: Dict[str, Dict[str, Any]] = {
    "series": {
        "name": "Closed series (equal rates / alpha = lambda)",
        "regimes": ("EqualRates", "AlphaEqLambda"),
        "law_method": None,  # resolved per regime
        "needs_radius": True,
    },
    "volterra": {
        "name": "Volterra integral equation (product trapezoid)",
        "regimes": ("EqualRates", "AlphaEqLambda", "Subcritical", "Critical", "Supercritical"),
        "law_method": "Volterra",
        "needs_radius": False,
    },
    "theorem25": {
        "name": "Cycle-convolution series",
        "regimes": ("EqualRates", "AlphaEqLambda", "Subcritical", "Critical", "Supercritical"),
        "law_method": "Theorem25",
        "needs_radius": False,
    },
    "mc": {
        "name": "Monte Carlo (exact event-driven simulation)",
        "regimes": ("EqualRates", "AlphaEqLambda", "Subcritical", "Critical", "Supercritical"),
        "law_method": "MonteCarlo",
        "needs_radius": False,
    },
    "auto": {
        "name": "Closed series inside the radius, Volterra otherwise",
        "regimes": ("EqualRates", "AlphaEqLambda", "Subcritical", "Critical", "Supercritical"),
        "law_method": None,
        "needs_radius": False,
    },
}


class StarBDISettings(BaseSettings):
    """Environment-driven defaults (STAR_BDI_* variables or .env)."""

    model_config = SettingsConfigDict(env_prefix="STAR_BDI_", env_file=".env", extra="ignore")

    rel_tol: float = 1e-12
    max_terms: int = 10_000
    consecutive_small: int = 3

    k_max: int = 200
    overflow_level: int = 10**9

    volterra_steps: int = 16_384
    cycle_grid: int = 2048
    cycle_j_max: int = 80
    theorem25_max_amplification: float = 1e8

    mc_chunk_size: int = 4096
    mc_workers: int = 1

    log_file: str = ".star-bdi-session.log"
    log_level: str = "INFO"


@lru_cache(maxsize=1)
def get_settings() -> StarBDISettings:
    """Return the process-wide settings instance."""
    settings = StarBDISettings()
    logger.debug(f"Settings loaded: {settings.model_dump()}")
    return settings


def get_method(method: str) -> Dict[str, Any]:
    """Look up a method entry, raising ValueError for unknown keys."""
    if method not in SUPPORTED_METHODS:
        logger.error(f"Unsupported method requested: {method}")
        raise ValueError(f"Unsupported method: {method}. Choose from {', '.join(SUPPORTED_METHODS)}")
    return SUPPORTED_METHODS[method]


def setup_logging(level: Optional[str] = None, log_file: Optional[str] = None) -> None:
    """Configure root logging for entry points (console + session file)."""
    settings = get_settings()
    level_name = (level or settings.log_level).upper()
    handlers = [logging.StreamHandler(sys.stdout)]
    target = log_file if log_file is not None else settings.log_file
    if target:
        handlers.append(logging.FileHandler(target, mode='a'))
    logging.basicConfig(
        level=getattr(logging, level_name, logging.INFO),
        format=LOG_FORMAT,
        handlers=handlers,
        force=True,
    )
