"""Stimulation-design portfolios under formation uncertainty."""

__version__ = "0.1.0"
