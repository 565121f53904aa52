"""Simulated avatar-addressed covert command channel over a local social network."""
from .errors import CovertSimError

__version__ = "0.1.0"
__all__ = ["CovertSimError", "__version__"]
