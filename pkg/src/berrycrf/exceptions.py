"""Exception types raised across the package."""


class BerryError(Exception):
    """Base class for all package errors."""


class ImageReadError(BerryError, OSError):
    """The image file could not be opened or read."""


class ImageFormatError(BerryError, ValueError):
    """The file is not a supported raster, or it is malformed/truncated."""


class EmptyImageError(BerryError, ValueError):
    """The raster has zero width or height."""


class EmptyDetectionError(BerryError):
    """No gradient survives thresholding, so no circle can be voted for."""


class ReferenceUnavailableError(BerryError):
    """Too few reference circles to train the one-class model."""


class NonSubmodularError(BerryError, ValueError):
    """A pairwise term violates the submodularity condition of min-cut."""


class EnergyError(BerryError, ValueError):
    """A CRF potential is not finite."""
