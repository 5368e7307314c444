"""Scribble-supervised cell segmentation with ensemble-filtered pseudo-labels."""
from .core import BG, FG, IGNORE, UNLABELED, EnsembleState, HyperParams, ImageSample, PseudoLabel, ScribbleMap
from .errors import (ConfigError, DataError, EnsembleConsistencyError, FormatError, GenerationError,
                     InvalidInputError, PreconditionError, Scribble2LabelError, TrainingError)

__version__ = "0.1.0"
