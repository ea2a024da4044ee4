"""Exception taxonomy shared by every stage of the pipeline.

The command line maps these onto exit codes: configuration problems exit
with 1, file problems with 2, and everything that goes wrong inside the
numeric pipeline with 3.
"""


class RefsrError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(RefsrError):
    """A config file or flag value is missing, unknown or out of range."""


class FormatError(RefsrError):
    """A file exists but its bytes do not follow the expected layout."""


class SizeError(RefsrError):
    """An input is too small for the requested operation."""


class ShapeError(RefsrError):
    """Array shapes are inconsistent with each other."""


class DivisibilityError(RefsrError):
    """A count does not divide evenly where an even split is required."""


class NoCandidateError(RefsrError):
    """Every candidate patch was excluded, no winner can be selected."""


class CapExceededError(RefsrError):
    """The exhaustive reference scan would exceed its candidate cap."""
