"""Group-aware pedestrian trajectory prediction."""

__version__ = "0.1.0"

from .estimator import GPGraph

__all__ = ["GPGraph"]
