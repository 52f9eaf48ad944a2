"""Adaptive phase-amplitude reduction and optimal re-entrainment toolkit.

Builds reduced models of limit-cycle oscillators (adjoint-based or
inferred from observable data alone), synthesizes optimal light-input
controls for time-zone shifts, and evaluates them on the full models.
"""

__version__ = "0.1.0"

from .family import ReductionFamily, build_family
from .models import build_population, circadian_field, light_waveform

__all__ = [
    "ReductionFamily",
    "build_family",
    "build_population",
    "circadian_field",
    "light_waveform",
    "__version__",
]
