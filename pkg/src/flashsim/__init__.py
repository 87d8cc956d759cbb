"""Deterministic virtual-time simulator of the complete SSD IO stack.

The simulated stack has four layers: the flash array (channels, LUNs,
blocks, pages, command timing), the SSD controller (mapping, garbage
collection, wear leveling, IO scheduling), a host OS dispatch layer with
a queue-depth cap and pluggable policies, and programmable workload
threads. Everything runs in integer-nanosecond virtual time inside a
single event loop, so two runs with the same config and seed produce
byte-identical traces.
"""

__version__ = "0.1.0"

from .engine import EventQueue, SimulationComplete
from .errors import (
    ConfigError,
    IntegrityError,
    ModelViolation,
    OutOfSpaceError,
    SchedulingInPast,
    SimulationError,
)
from .config import load_config, default_config
from .host import (WorkloadThread, submit_read, submit_write, trim,
                   tag_priority, tag_temperature, tag_locality)
from .sim import Simulation, RunResult, run_config

__all__ = [
    "EventQueue",
    "SimulationComplete",
    "ConfigError",
    "SimulationError",
    "ModelViolation",
    "IntegrityError",
    "OutOfSpaceError",
    "SchedulingInPast",
    "Simulation",
    "RunResult",
    "run_config",
    "load_config",
    "default_config",
    "WorkloadThread",
    "submit_read",
    "submit_write",
    "trim",
    "tag_priority",
    "tag_temperature",
    "tag_locality",
]
