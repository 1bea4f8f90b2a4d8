"""FastMCP server package for adaptive augmentation policy search."""

__all__ = ["__version__"]

__version__ = "0.1.0"
