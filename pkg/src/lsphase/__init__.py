"""lsphase: dual-band learned phase retrieval from photon-limited
defocused intensity images."""

__version__ = "0.1.0"
