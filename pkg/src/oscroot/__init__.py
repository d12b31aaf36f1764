"""Oscillation root-cause analysis from PMU data via EDMD participation factors."""

__version__ = "0.1.0"
