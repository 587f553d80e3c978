"""Adaptive uplink video streaming to an edge inference server.

The package simulates a camera client that streams over a capacity-varying
uplink to an edge server running detection, navigation and VLM services,
with a feedback-driven controller that adapts the encoder each epoch.
"""

from .scenario import Scenario, load_scenario
from .sim import SimResult, run_sim

__all__ = ["Scenario", "SimResult", "load_scenario", "run_sim"]
__version__ = "0.1.0"
