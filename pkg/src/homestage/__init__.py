"""Virtual staging of calibrated HDR indoor panoramas."""

__version__ = "0.1.0"
