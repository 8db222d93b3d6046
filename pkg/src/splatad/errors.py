"""Exception hierarchy shared across the pipeline.

Every error class carries a distinct process exit code so the CLI can
map failures to machine-checkable statuses (0 = success, 2 = usage).
"""


class SplatError(Exception):
    """Base class for all pipeline errors."""

    exit_code = 1


class EmptyCloud(SplatError):
    exit_code = 3


class ShapeMismatch(SplatError):
    exit_code = 4


class DegenerateAxis(SplatError):
    exit_code = 5


class NoViews(SplatError):
    exit_code = 6


class DivergedFit(SplatError):
    exit_code = 7


class EmptyTrainingSet(SplatError):
    exit_code = 8


class NonFiniteLoss(SplatError):
    exit_code = 9


class ImageTooSmall(SplatError):
    exit_code = 10


class SingleClass(SplatError):
    exit_code = 11


class NoAnomalousPixels(SplatError):
    exit_code = 12


class EmptyMap(SplatError):
    exit_code = 13


class NonFiniteGradient(SplatError):
    exit_code = 14


class StaleForwardState(SplatError):
    exit_code = 15


class ConfigError(SplatError):
    exit_code = 16


class CulledBehindCamera(SplatError):
    """Splat lies outside the camera's depth range; callers skip, not abort."""

    exit_code = 17
