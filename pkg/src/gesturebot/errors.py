"""Exception hierarchy.

Every error carries the process exit code the CLI maps it to:
1 usage, 2 parse/input, 3 backend transport, 4 safety violation.
"""

from __future__ import annotations

from typing import Any


class GestureBotError(Exception):
    exit_code = 1

    def to_dict(self) -> dict[str, Any]:
        return {
            "error": type(self).__name__,
            "message": str(self),
            "exit_code": self.exit_code,
        }


class UsageError(GestureBotError):
    exit_code = 1


class InputError(GestureBotError, ValueError):
    """Malformed or inconsistent input data."""

    exit_code = 2


class ConfigError(InputError):
    pass


class DimensionError(InputError):
    pass


class EmptyInputError(InputError):
    pass


class OrderingError(InputError):
    pass


class MappingError(InputError):
    pass


class PoseGeometryError(InputError):
    pass


class RoutingError(InputError):
    pass


class BvhParseError(InputError):
    """Base class for BVH syntax errors; ``line`` is 1-based."""

    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")

    def to_dict(self) -> dict[str, Any]:
        d = super().to_dict()
        d["line"] = self.line
        return d


class MissingSectionError(BvhParseError):
    pass


class ChannelCountError(BvhParseError):
    pass


class NonNumericValueError(BvhParseError):
    pass


class FrameCountError(BvhParseError):
    pass


class BackendError(GestureBotError):
    """Transport-level failure talking to the LLM server."""

    exit_code = 3


class BackendConnectionError(BackendError):
    pass


class BackendHTTPError(BackendError):
    def __init__(self, status: int, body: str = "") -> None:
        self.status = status
        super().__init__(f"HTTP {status}: {body[:200]}")


class BackendTimeoutError(BackendError):
    pass


class MalformedResponseError(BackendError):
    pass


class MissingFixtureError(BackendError):
    pass


class SafetyError(GestureBotError):
    """Trajectory violates joint velocity limits after conditioning."""

    exit_code = 4

    def __init__(self, message: str, violations: list | None = None) -> None:
        self.violations = list(violations or [])
        super().__init__(message)

    def to_dict(self) -> dict[str, Any]:
        d = super().to_dict()
        d["violations"] = [v.to_dict() for v in self.violations]
        return d


class EvaluationAborted(GestureBotError):
    """Too many transport failures; ``partial`` holds the invalid run."""

    exit_code = 3

    def __init__(self, message: str, partial: Any = None) -> None:
        self.partial = partial
        super().__init__(message)
