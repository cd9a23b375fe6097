"""Exception hierarchy shared by all andri modules."""


class AndriError(Exception):
    """Base class for all errors raised by this package."""


class BadParam(AndriError):
    """A parameter value is outside its documented domain."""


class EmptyInput(AndriError):
    """An input is empty or too short for the requested operation."""


class LengthMismatch(AndriError):
    """Two sequences that must agree in length do not."""


class DegenerateInput(AndriError):
    """A constant sequence was passed where variance normalization is required."""


class OverlapError(AndriError):
    """Two clusters expected to be disjoint share members."""


class InvalidLevel(AndriError):
    """A dendrogram level reference does not satisfy its preconditions."""


class InsufficientData(AndriError):
    """Not enough data to train or evaluate."""


class DegenerateCluster(AndriError):
    """No cluster large enough to define a normal pattern."""


class NonFiniteInput(AndriError):
    """A stream value is NaN or infinite."""


class NoPatterns(AndriError):
    """Scoring was requested against a model with no patterns."""


class UndefinedMetric(AndriError):
    """A metric is undefined for the given inputs (e.g. single-class labels)."""


class Infeasible(AndriError):
    """A requested injection cannot be placed under its constraints."""


class FormatError(AndriError):
    """A serialized document is malformed."""


class ManifestError(AndriError):
    """An experiment manifest fails validation."""
