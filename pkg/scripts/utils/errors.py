"""
Exception hierarchy for corrgen.

Library code raises these; only the CLI turns them into exit codes and the
machine-readable error document.
"""

from typing import Optional


class CorrgenError(Exception):
    """Base class for every error raised by corrgen."""
    code = "corrgen_error"
    exit_code = 1


class ResourceError(CorrgenError):
    """A configured resource (directory, file, library) is missing or empty."""
    code = "missing_resource"
    exit_code = 3


class DimensionError(CorrgenError):
    """Array or image dimensions do not agree."""
    code = "dimension_mismatch"
    exit_code = 4


class ConfigError(CorrgenError):
    """Scene or run configuration is malformed."""
    code = "invalid_config"
    exit_code = 4


# Body model container

class ModelFormatError(CorrgenError):
    code = "model_format"
    exit_code = 4


class MissingFileError(ModelFormatError, ResourceError):
    code = "missing_file"
    exit_code = 3


class DimensionMismatchError(ModelFormatError, DimensionError):
    code = "dimension_mismatch"
    exit_code = 4


class WeightsNotNormalizedError(ModelFormatError):
    code = "weights_not_normalized"


class KinematicCycleError(ModelFormatError):
    code = "kinematic_cycle"


class InvalidModelError(ModelFormatError):
    """Any other broken model invariant (face indices, regressor rows, ...)."""
    code = "invalid_model"


class ParameterError(CorrgenError):
    """Shape or pose parameters violate their constraints."""
    code = "invalid_parameters"
    exit_code = 4


# Atlas

class AtlasError(CorrgenError):
    code = "atlas"
    exit_code = 4


class UnknownChartError(AtlasError):
    code = "unknown_chart"


class AtlasCoverageError(AtlasError):
    code = "atlas_coverage"


# Motion capture

class MotionError(CorrgenError):
    code = "motion"
    exit_code = 4


class BvhSyntaxError(MotionError):
    code = "bvh_syntax"

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ChannelCountError(MotionError):
    code = "channel_count"

    def __init__(self, message: str, frame: Optional[int] = None):
        self.frame = frame
        if frame is not None:
            message = f"frame {frame}: {message}"
        super().__init__(message)


class UnsupportedChannelError(MotionError):
    code = "unsupported_channel"


class FrameRangeError(CorrgenError):
    code = "frame_range"
    exit_code = 5


# Geometry / camera

class UndistortionError(CorrgenError):
    code = "undistortion_diverged"
    exit_code = 4


class EmptyMeshError(CorrgenError):
    code = "empty_mesh"
    exit_code = 4


# Dataset / evaluation

class RleError(CorrgenError):
    code = "rle"
    exit_code = 4


class CocoFormatError(CorrgenError):
    code = "coco_format"
    exit_code = 4

    def __init__(self, message: str, key_path: Optional[str] = None):
        self.key_path = key_path
        if key_path:
            message = f"{key_path}: {message}"
        super().__init__(message)


class DuplicateIdError(CocoFormatError):
    code = "duplicate_id"


class IdMismatchError(CorrgenError):
    code = "id_mismatch"
    exit_code = 4


class ManifestDriftError(CorrgenError):
    code = "manifest_drift"
    exit_code = 4
