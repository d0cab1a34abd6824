"""Bang-off-bang low-thrust guidance by model predictive static programming."""

__version__ = "0.1.0"
