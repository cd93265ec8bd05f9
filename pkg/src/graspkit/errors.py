"""Shared exception types."""


class InvariantViolation(Exception):
    """A loaded or computed artifact breaks a documented invariant."""
