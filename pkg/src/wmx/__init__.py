"""Interpretability tools for a VAE + LSTM world model of pedestrian perception."""

__version__ = "0.1.0"
