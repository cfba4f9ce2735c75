"""Exception hierarchy shared by the model, controllers and harness."""


class HvacError(Exception):
    """Base class for all package errors."""


class InvalidModelError(HvacError, ValueError):
    """Physical parameters that do not describe a valid discrete-time zone model."""


class DegenerateDynamicsError(HvacError, ValueError):
    """Indoor temperature at or below the supply-air temperature (cooling mode violated)."""


class TuningError(HvacError):
    """Control parameters cannot be derived (e.g. non-positive V upper bound)."""


class ControllabilityError(HvacError):
    """Configuration fails the controllability inequalities and no override was given."""


class SolverError(HvacError):
    """Dual search failed to terminate within the iteration cap."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class InfeasibleSlotError(SolverError):
    """Minimum air rates alone exceed the building airflow cap."""


class CoordinationTimeout(HvacError):
    """A zone agent did not reply to a broadcast."""

    def __init__(self, zone_id):
        super().__init__(f"no reply from zone {zone_id}")
        self.zone_id = zone_id


class PrivacyViolation(HvacError):
    """A coordination frame carried data outside the public message schema."""


class FeasibilityViolation(HvacError):
    """Indoor temperature left its comfort band under a controller with valid tuning."""

    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump or {}


class TraceFormatError(HvacError, ValueError):
    """Malformed trace file or a trace too short for the requested horizon."""


class ConfigError(HvacError, ValueError):
    """Run configuration document is malformed or inconsistent."""
