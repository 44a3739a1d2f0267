"""Grape berry detection and sizing with a one-class CRF."""
from .crf import BERRY, NONBERRY, OneClassCRF
from .detection import CandidateSet, Circle, CircleDetector, detect_circles
from .exceptions import (
    BerryError,
    EmptyDetectionError,
    EmptyImageError,
    EnergyError,
    ImageFormatError,
    ImageReadError,
    NonSubmodularError,
    ReferenceUnavailableError,
)
from .features import PatchDescriptor, ReferenceCorrelation
from .pipeline import AnalysisResult, BerryPipeline
from .sizing import calibrate_scale, summarize

__version__ = "0.1.0"

__all__ = [
    "BERRY",
    "NONBERRY",
    "AnalysisResult",
    "BerryError",
    "BerryPipeline",
    "CandidateSet",
    "Circle",
    "CircleDetector",
    "EmptyDetectionError",
    "EmptyImageError",
    "EnergyError",
    "ImageFormatError",
    "ImageReadError",
    "NonSubmodularError",
    "OneClassCRF",
    "PatchDescriptor",
    "ReferenceCorrelation",
    "ReferenceUnavailableError",
    "calibrate_scale",
    "detect_circles",
    "summarize",
]
