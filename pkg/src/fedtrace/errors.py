"""Error types shared across the package.

Plain ``ValueError`` / ``IndexError`` cover invalid arguments and bad indices;
the classes below name the remaining failure modes.
"""


class CapacityError(RuntimeError):
    """The vocabulary cannot accommodate another trigger assignment."""


class IntegrityError(RuntimeError):
    """A signature or derived value failed verification."""


class StateError(RuntimeError):
    """An operation was called in the wrong lifecycle state."""
