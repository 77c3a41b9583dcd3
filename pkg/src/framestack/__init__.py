"""Long-tailed classification harness over frame-feature sequences.

Implements running-AP-driven frame resampling with pair concatenation
(FrameStack) together with re-sampling, re-weighting and augmentation
baselines, all in plain numpy.
"""

from framestack.core import (
    ClassStats,
    DataError,
    DatasetManifest,
    GroupThresholds,
    NumericError,
    Record,
    assign_group,
    binarize_labels,
    validate_manifest,
)

__version__ = "0.1.0"

__all__ = [
    "ClassStats",
    "DataError",
    "DatasetManifest",
    "GroupThresholds",
    "NumericError",
    "Record",
    "assign_group",
    "binarize_labels",
    "validate_manifest",
]
