"""Null rays, WKB amplitudes and caustic crossing for Reissner-Nordstrom wave equations."""

from .metric import Branch, MetricParams, PhaseState, CartesianState, Regime, classify

__all__ = ["Branch", "MetricParams", "PhaseState", "CartesianState", "Regime", "classify"]
__version__ = "0.1.0"
