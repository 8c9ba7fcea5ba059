"""Exception hierarchy shared by every roifusion module."""


class RoIFusionError(Exception):
    """Base class for all library errors."""


class ConfigError(RoIFusionError, ValueError):
    """Invalid or unknown configuration value."""


class DataError(RoIFusionError):
    """Base class for problems with input files or datasets."""


class MalformedFile(DataError, ValueError):
    pass


class MissingKey(DataError, KeyError):
    def __init__(self, key):
        super().__init__(key)
        self.key = key

    def __str__(self):
        return f"missing key {self.key!r}"


class IncompatibleCheckpoint(DataError, ValueError):
    pass


class PlacementFailure(RoIFusionError, RuntimeError):
    """Synthetic scene generation could not place all objects."""


class ShapeMismatch(RoIFusionError, ValueError):
    pass


class CountExceedsInput(RoIFusionError, ValueError):
    pass


class EmptyGroup(RoIFusionError, ValueError):
    pass


class NoVisibleCorners(RoIFusionError, ValueError):
    pass


class NoForegroundPoints(RoIFusionError, ValueError):
    pass


class BinOutOfRange(RoIFusionError, IndexError):
    pass
