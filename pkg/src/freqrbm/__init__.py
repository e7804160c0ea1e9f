"""Certified frequency-domain reduced basis method for parametric LTI systems."""

__version__ = "0.1.0"
