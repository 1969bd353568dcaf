"""Exception types shared across the library."""


class TsrmLabError(Exception):
    """Base class for all library errors."""


class InvalidConfig(TsrmLabError):
    """A parameter or configuration value is out of its allowed range."""


class UndefinedStart(TsrmLabError):
    """Start height is at or below the barrier, where the path is undefined."""


class MalformedKnots(TsrmLabError):
    """Piecewise-linear knot list is unsorted, duplicated, or does not cover the window."""


class ChiOutsideWindow(TsrmLabError):
    """The switch abscissa lies outside the grid window of the barrier."""


class ResourceLimit(TsrmLabError):
    """A construction exceeded its line-count or memory budget."""


class NotClosedInWindow(TsrmLabError):
    """A path-envelope profile did not return to the barrier inside the window."""


class TimeOutOfRange(TsrmLabError):
    """Requested time exceeds the largest closed envelope area in the window."""


class NotNiceBarrier(TsrmLabError):
    """Operation requires a barrier that passes the left-of-chi regularity check."""


class EdgeEffect(UserWarning):
    """Warning: a query touches the window edge, results may be truncated."""
