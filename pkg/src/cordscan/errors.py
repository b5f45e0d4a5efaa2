"""Exception hierarchy shared by all pipeline stages."""


class CordscanError(Exception):
    """Base class for all toolkit errors."""


# ---------------------------------------------------------------------------
# file I/O

class UnsupportedFormat(CordscanError):
    """File is not single-file NIfTI-1 or uses a datatype we do not read."""


class CorruptHeader(CordscanError):
    """File too short, malformed header, or data does not match the header."""


class IoFailure(CordscanError):
    """Write failed (unwritable path, disk error)."""


class LengthMismatch(CordscanError):
    """bval and bvec files disagree on the number of measurements."""


class NonNumericToken(CordscanError):
    """bval/bvec file contains a token that does not parse as a number."""


class InvalidScheme(CordscanError):
    """Gradient table violates a structural invariant (no b=0 entry, ...)."""


# ---------------------------------------------------------------------------
# model fitting

class RankDeficientDesign(CordscanError):
    """Gradient directions do not span the tensor space."""


class InsufficientDirections(CordscanError):
    """Fewer than 6 non-collinear b>0 directions."""


class NonPositiveS0(CordscanError):
    """Mean b=0 signal is zero or negative; cannot normalize."""


class DimensionMismatch(CordscanError):
    """Volumes that must share a grid do not."""


# ---------------------------------------------------------------------------
# phantom

class InvalidSpec(CordscanError):
    """Phantom description violates its invariants."""


# ---------------------------------------------------------------------------
# region aggregation

class EmptyRegion(CordscanError):
    """Requested level has zero total white-matter weight."""


class MissingLesionMask(CordscanError):
    """Lesion statistics requested but no lesion volume supplied."""


class DuplicateRow(CordscanError):
    """Two rows for the same (subject, level) in a cohort table."""


# ---------------------------------------------------------------------------
# statistics

class DegenerateSample(CordscanError):
    """Sample too small or otherwise unusable for the requested test."""


class ZeroVariance(CordscanError):
    """A metric is constant over the selected rows."""


class UnbalancedDesignUnderdetermined(CordscanError):
    """Level pooling needs every level observed for >= 2 subjects and
    every subject observed at >= 2 levels."""


# ---------------------------------------------------------------------------
# classification

class ZeroVarianceColumn(CordscanError):
    """Feature column constant; cannot scale to unit variance."""


class SingleClassTraining(CordscanError):
    """Training labels contain only one class."""


class SingularCovariance(CordscanError):
    """Pooled covariance not invertible and no ridge requested."""


class SingleClassTest(CordscanError):
    """Test labels contain only one class; ROC AUC undefined."""


class TooFewRows(CordscanError):
    """Not enough rows per class for stratified train/test splits."""
