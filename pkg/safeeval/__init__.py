"""safeeval - safe evaluation of offline-learned policies."""

__version__ = "0.1.0"
