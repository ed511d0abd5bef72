"""tqnn: transformer-assisted quantum neural network circuit search."""

__version__ = "0.1.0"
