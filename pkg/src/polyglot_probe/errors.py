"""Exception hierarchy shared by the library and the CLI.

The CLI maps :class:`InputError` to exit code 1 and :class:`InvariantError`
to exit code 2.
"""


class ProbeError(Exception):
    """Base class for all polyglot_probe errors."""


class InputError(ProbeError, ValueError):
    """Bad user input: malformed files, invalid parameters, mismatched artifacts."""


class InvariantError(ProbeError, RuntimeError):
    """An internal invariant was violated. Indicates a bug, not bad input."""
