"""Run-time-assurance toolkit: safety filters, plants, invariant sets and reachability."""
from .dynamics import Box, make_plant
from .filters import AlphaFunction, FilterConfig, FilterOutput, SafetyFilter
from .harness import ScenarioConfig, compare_filters, run_closed_loop
from .scenarios import build_scenario, scenario_ids

__version__ = "0.1.0"

__all__ = ["Box", "make_plant", "AlphaFunction", "FilterConfig", "FilterOutput", "SafetyFilter",
           "ScenarioConfig", "compare_filters", "run_closed_loop", "build_scenario",
           "scenario_ids"]
