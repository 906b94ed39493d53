"""Distributed neural hybrid precoding for multiuser mmWave MIMO with limited feedback."""

__version__ = "0.1.0"
