"""Exception types shared across the toolkit."""


class LookbackError(Exception):
    """Base class for all toolkit errors."""


class TraceFormatError(LookbackError):
    """Malformed or unreadable trace/annotation/feature record."""


class InvalidSpanError(LookbackError, ValueError):
    pass


class EmptyResponseError(LookbackError, ValueError):
    pass


class DegenerateLabelsError(LookbackError, ValueError):
    """Raised when an operation needs both labels but only one is present."""


class InvalidFeatureError(LookbackError, ValueError):
    pass


class LayoutError(LookbackError, ValueError):
    """Feature vector does not match the expected head layout."""


class InsufficientHeadsError(LookbackError, ValueError):
    pass


class CapacityError(LookbackError):
    """Generator ran past its maximum sequence length."""


class ShapeError(LookbackError, ValueError):
    pass


class EmptyDatasetError(LookbackError, ValueError):
    pass


class AlignmentError(LookbackError, ValueError):
    pass


class RankDeficiencyError(LookbackError, ValueError):
    pass
