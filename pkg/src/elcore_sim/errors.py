from __future__ import annotations


class ConfigurationError(ValueError):
    """Raised when a scenario or system description is internally inconsistent."""


class SimulationError(RuntimeError):
    """Raised when a runtime invariant is violated; carries the event time."""

    def __init__(self, message: str, time_ns: int | None = None):
        if time_ns is not None:
            message = f"[t={time_ns}ns] {message}"
        super().__init__(message)
        self.time_ns = time_ns
