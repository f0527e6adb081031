"""Exception hierarchy shared by every wmx module."""


class WmxError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(WmxError, ValueError):
    pass


class FormatError(WmxError, ValueError):
    """A file on disk does not follow its declared format."""


class ChecksumError(FormatError):
    pass
