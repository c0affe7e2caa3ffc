"""Exception hierarchy shared across the package.

Structural errors mean the input object violates its format or mesh/profile
invariants (CLI exit code 2). Domain errors mean the computation is not
applicable to an otherwise valid input, e.g. asking for a neck on a profile
that has none (CLI exit code 1).
"""


class IsoWillmoreError(Exception):
    """Base class for all package errors."""


class StructuralError(IsoWillmoreError):
    """Invalid mesh/profile/file structure."""


class DomainError(IsoWillmoreError):
    """Valid input, but the requested quantity does not exist for it."""
