"""
Error types for the raceway simulator.

Every error carries enough context to be rendered as the machine-readable
error JSON written by the command-line front end (see ``RacewayError.to_dict``).
"""


class RacewayError(Exception):
    """Base class for all errors raised by the raceway modules."""

    kind = "raceway-error"

    def __init__(self, message, **details):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self):
        """Return a JSON-serializable description of the error."""
        payload = {"error": self.kind, "message": self.message}
        payload.update({key: value for key, value in self.details.items() if value is not None})
        return payload


class MalformedConfigError(RacewayError):
    kind = "malformed-config"

    def __init__(self, message, line=None, path=None):
        super().__init__(message, line=line, path=str(path) if path is not None else None)
        self.line = line


class ConfigValidationError(RacewayError):
    kind = "validation"

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}", field=field)
        self.field = field


class DomainError(RacewayError, ValueError):
    kind = "domain"


class InfeasibleProfileError(RacewayError):
    kind = "infeasible-profile"

    def __init__(self, node, height, reason="is not positive"):
        super().__init__(
            f"water height {height:.6g} m at node {node} {reason}",
            node=int(node),
            height=float(height),
        )
        self.node = int(node)
        self.height = float(height)


class NoCompensationError(RacewayError):
    kind = "no-compensation"


class PondTooDeepError(RacewayError):
    kind = "pond-too-deep"


class PermutationError(RacewayError, ValueError):
    kind = "permutation"


class CombinatorialLimitError(RacewayError):
    kind = "combinatorial-limit"


class SearchFailedError(RacewayError):
    kind = "search-failed"


class UsageError(RacewayError):
    kind = "usage"


class OutputError(RacewayError):
    kind = "output"


class InternalError(RacewayError):
    """Unexpected exception, wrapped so the front end can still report it."""

    kind = "internal"
