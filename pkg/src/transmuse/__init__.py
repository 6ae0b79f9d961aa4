"""Transferable multi-service traffic forecasting for edge networks."""
__version__ = "0.1.0"
