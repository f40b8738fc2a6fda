"""Scenario loading and the discrete-event mesh simulator."""

from meshgate.simnet.engine import InvalidScenario, Simulation, SimulationResult, simulate
from meshgate.simnet.scenario import (
    Scenario,
    ScenarioError,
    load_scenario,
    parse_scenario,
    resolve_scenario,
    synthetic_scenario,
    validate_scenario,
)

__all__ = [
    "InvalidScenario",
    "Scenario",
    "ScenarioError",
    "Simulation",
    "SimulationResult",
    "load_scenario",
    "parse_scenario",
    "resolve_scenario",
    "simulate",
    "synthetic_scenario",
    "validate_scenario",
]
