"""Exception types shared across the package."""


class FatigueRLError(Exception):
    """Base class for all package errors."""


class DimensionError(FatigueRLError):
    """Shapes or widths do not line up; message names the offending entity."""


class ContractError(FatigueRLError):
    """A documented precondition was violated by the caller."""


class InputError(FatigueRLError):
    """An externally supplied value is out of its declared range."""


class ConfigError(FatigueRLError):
    """Invalid configuration."""


class TrainingError(FatigueRLError):
    """Optimization produced a non-finite quantity; message carries diagnostics."""


class SimulationError(FatigueRLError):
    """The physical simulation left its valid region; message carries a state dump."""


class NumericalError(FatigueRLError):
    """A numerical routine failed beyond recoverable tolerance."""


class CheckpointError(FatigueRLError):
    """Checkpoint file is corrupt, truncated, or has a mismatched version."""
