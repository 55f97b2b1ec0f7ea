"""Pebble-bed reactor operation digital twin.

Zone-based depletion simulator with a reduced-order neutronics kernel,
sequence-model training on operating history and synthetic discharge
measurements, PCA mesh compression, autoregressive forecasting, and an
automated running-in controller.
"""

__version__ = "0.1.0"

from .config import CoreConfig

__all__ = ["CoreConfig", "__version__"]
