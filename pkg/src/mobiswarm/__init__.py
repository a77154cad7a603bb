"""Discrete-event simulation of BitTorrent swarms with mobile peers."""

from mobiswarm.config import ScenarioConfig, load_config, parse_config
from mobiswarm.engine import Simulation, build_scenario, run
from mobiswarm.hybrid import Mode

__all__ = ["Mode", "ScenarioConfig", "Simulation", "build_scenario", "load_config", "parse_config", "run"]
__version__ = "0.1.0"
