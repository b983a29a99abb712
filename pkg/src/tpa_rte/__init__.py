"""Forward and inverse transport with two-photon absorption in 2D."""
__version__ = "0.1.0"
