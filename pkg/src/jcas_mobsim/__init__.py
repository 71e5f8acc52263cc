"""Deterministic discrete-event simulator for cooperative joint communication
and sensing among vehicles, drones, roadside units and edge servers."""

from .runner import MetricsRecord, Simulation, run, simulate
from .scenario import Scenario, load_preset, load_scenario

__all__ = ["MetricsRecord", "Scenario", "Simulation", "load_preset", "load_scenario", "run", "simulate"]
__version__ = "0.1.0"
