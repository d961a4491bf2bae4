"""Exception types raised across the toolkit."""


class MFBError(Exception):
    """Base class for toolkit errors."""


class DomainError(MFBError, ValueError):
    """An argument lies outside the domain of an operation."""


class InvalidMapError(MFBError, ValueError):
    """A point map returned inconsistent output dimensions."""


class SizeError(MFBError, ValueError):
    """An input exceeds a configured size cap."""


class InvalidControlError(DomainError):
    """A control value lies outside the control box."""


class BlowUpError(MFBError, ArithmeticError):
    """Non-finite values appeared while integrating a flow."""

    def __init__(self, t: float, particle: int, message: str = "") -> None:
        self.t = t
        self.particle = particle
        super().__init__(message or f"non-finite velocity at t={t!r}, particle {particle}")


class AnalysisError(MFBError, RuntimeError):
    """Every probe of an analysis quantity failed."""


class SelectionError(MFBError, RuntimeError):
    """The feedback set was empty at a node of a closed-loop simulation."""

    def __init__(self, node: int, t: float) -> None:
        self.node = node
        self.t = t
        super().__init__(f"empty feedback set at node {node} (t={t!r})")
