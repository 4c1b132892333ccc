"""Galton-Watson trees of alleles under rare neutral mutations and their CSBP limits."""

__version__ = "0.1.0"
