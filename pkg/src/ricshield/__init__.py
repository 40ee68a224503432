"""Privacy-preserving interference classification toolkit for near-RT RIC experiments."""

__version__ = "0.1.0"
