"""Exception hierarchy shared by every augscout module."""


class AugScoutError(Exception):
    """Base class for all toolkit errors."""


class DegenerateCrop(AugScoutError, ValueError):
    pass


class InvalidSpec(AugScoutError, ValueError):
    pass


class DatasetUnavailable(AugScoutError):
    pass


class ChecksumMismatch(AugScoutError):
    pass


class ClassTooSmall(AugScoutError, ValueError):
    pass


class PluginFailure(AugScoutError):
    """A trainer plugin could not produce a RunRecord."""


class NonFiniteLoss(PluginFailure):
    pass


class EmptyClass(AugScoutError, ValueError):
    pass


class AllRunsFailed(AugScoutError):
    pass


class InvalidConfig(AugScoutError, ValueError):
    pass


class PartialCompletion(AugScoutError):
    """Some jobs failed twice; the store is consistent and resumable."""

    def __init__(self, message, failed=()):
        super().__init__(message)
        self.failed = list(failed)


class NoData(AugScoutError):
    pass


class EmptyRange(AugScoutError, ValueError):
    pass


class EmptyCurve(AugScoutError, ValueError):
    pass


class TooFewPoints(AugScoutError, ValueError):
    pass


class NoClasses(AugScoutError, ValueError):
    pass


class GridMismatch(AugScoutError, ValueError):
    pass


class FixtureCorrupt(AugScoutError):
    pass


class RenderFailure(AugScoutError):
    pass
