"""Two-stage speech enhancement on a numpy autograd engine."""

__version__ = "0.1.0"
