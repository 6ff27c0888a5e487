"""Co-evolved meta graph neural networks on heterogeneous multi-attributed graphs."""

__version__ = "0.1.0"
