"""Hex-grid ride-hailing fleet relocation lab with deep relocating options."""
from .hexgrid import GridSpec, HexCoord, HexGrid
from .sim import Scenario, SimConfig, World

__all__ = ["GridSpec", "HexCoord", "HexGrid", "Scenario", "SimConfig", "World"]
__version__ = "0.1.0"
