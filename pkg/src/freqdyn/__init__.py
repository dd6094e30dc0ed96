"""Frequency-dynamic convolution toolkit for sound event detection.

The package implements frequency-dynamic 2-D convolution and its partial,
multi, dilated, and multi-dilated variants on a small numpy reverse-mode
engine, assembles them into a CRNN detector, and ships the surrounding
desk-scale pipeline: synthetic spectrogram data, augmentation, training,
median-filter post-processing, and PSDS evaluation.
"""

from .errors import CheckpointError, ConfigurationError, TrainingDiverged

__all__ = [
    "CheckpointError",
    "ConfigurationError",
    "TrainingDiverged",
]

__version__ = "0.1.0"
