"""Tabular state-adversarial MDPs with soft-constrained adversaries."""

from .core import PerturbationMap, SoftParams, TabularSaMdp, validate
from .divergence import Divergence

__all__ = ["Divergence", "PerturbationMap", "SoftParams", "TabularSaMdp", "validate"]
__version__ = "0.1.0"
