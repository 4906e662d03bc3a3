"""Exception types shared across the simulator.

The CLI maps these onto exit codes: configuration problems exit with 2,
runtime contract violations with 3.
"""

from __future__ import annotations


class ConfigurationError(ValueError):
    """A config value is out of range, unknown, or inconsistent."""


class ContractViolationError(ValueError):
    """An operation was called with arguments that break its contract."""


class ProtocolError(RuntimeError):
    """Client/server bookkeeping got out of sync (queue overflow, round mismatch)."""


class DecodeError(ValueError):
    """A wire message failed to decode. Carries the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset
