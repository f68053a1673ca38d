"""Mass-splitting transport for a constrained nonlocal Fokker-Planck model."""

__version__ = "0.1.0"
