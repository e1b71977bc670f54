"""Causal recursive complex spectral mapping speech enhancement (DARCCN)."""

__version__ = "0.1.0"
