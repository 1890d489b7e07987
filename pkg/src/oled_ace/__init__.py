"""Power-constrained contrast enhancement for OLED displays."""

__version__ = "0.1.0"
