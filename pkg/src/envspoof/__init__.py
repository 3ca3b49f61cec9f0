"""Environmental sound deepfake detection with dual-branch top-k layer fusion."""

from .config import ExperimentConfig
from .model import Detector

__version__ = "0.1.0"

__all__ = ["Detector", "ExperimentConfig"]
