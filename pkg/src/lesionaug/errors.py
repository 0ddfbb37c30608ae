"""Exception hierarchy shared by every stage of the pipeline."""

from __future__ import annotations


class LesionAugError(Exception):
    """Base class for all package errors."""


class ValidationError(LesionAugError, ValueError):
    """An input violates a documented precondition."""


class ShapeError(ValidationError):
    """Array shapes are incompatible with an operation."""


class IngestionError(LesionAugError):
    """A manifest row could not be turned into a LesionROI."""


class CropError(ValidationError):
    """A crop window does not fit inside the source image."""


class ResizeError(ValidationError):
    """Input is too small to interpolate."""


class UndefinedMetricError(LesionAugError, ZeroDivisionError):
    """A metric denominator is zero."""


class LeakageError(LesionAugError):
    """Test-fold material was found in a training pool."""


class TrainingError(LesionAugError, RuntimeError):
    """Training produced non-finite values and was aborted."""
