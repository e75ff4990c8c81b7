"""Model merging with adaptive rank selection over singular components."""

__version__ = "0.1.0"
