"""Exception types shared across the package."""


class ApSoftError(Exception):
    """Base class for all apsoft errors."""


class InvalidArgument(ApSoftError, ValueError):
    pass


class DegenerateScaleError(ApSoftError):
    """The scale is so coarse that ln(2)/S floors to zero."""


class PrecisionOverflowError(ApSoftError):
    """A value does not fit the bit width it was assigned."""

    def __init__(self, field, value=None, width=None):
        self.field = field
        self.value = value
        self.width = width
        msg = f"{field}: value {value} does not fit in {width} bits" if width is not None else str(field)
        super().__init__(msg)


class UnknownPresetError(ApSoftError, KeyError):
    pass


class DegenerateDistributionError(ApSoftError):
    """All approximated exponentials are zero, so the softmax is undefined."""


class LayoutConflictError(ApSoftError):
    pass


class PrecisionWarning(UserWarning):
    """Emitted in permissive mode when a value is widened or saturated."""
