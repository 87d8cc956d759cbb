"""Exception hierarchy shared across the simulator."""


class ConfigError(Exception):
    """Bad configuration: unknown key, type error, unresolvable path."""


class SimulationError(Exception):
    """Base for fatal errors raised while a simulation is running."""


class SchedulingInPast(SimulationError):
    """An event was scheduled before the current virtual time (logic bug)."""


class ModelViolation(SimulationError):
    """An operation broke a hard model rule (out-of-order program, duplicate
    enqueue, bind without a completed program, ...)."""


class IntegrityError(SimulationError):
    """Stored data would be lost or fabricated (read of an unwritten page,
    erase of a block still holding valid pages)."""


class OutOfSpaceError(SimulationError):
    """No usable free space anywhere; indicates GC misconfiguration."""


class UnmappedRead(Exception):
    """Read of a logical page that was never written. Surfaced to the issuing
    thread as a failed IO, not fatal to the run."""
