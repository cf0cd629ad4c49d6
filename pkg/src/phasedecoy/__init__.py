"""Certified key-rate bounds for decoy-state QKD with imperfectly phase-randomised lasers."""

from __future__ import annotations

from .config import ConfigError, RunConfig, load
from .keyrate import KeyRatePoint
from .pipeline import Truncation, decoy_table, keyrate_point
from .protocol import ProtocolParams, simulate_statistics

__all__ = [
    "ConfigError",
    "KeyRatePoint",
    "ProtocolParams",
    "RunConfig",
    "Truncation",
    "decoy_table",
    "keyrate_point",
    "load",
    "simulate_statistics",
]

__version__ = "0.1.0"
