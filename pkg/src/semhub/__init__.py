"""semhub: multi-domain IoT middleware on a minimal semantic store."""

__version__ = "0.1.0"
