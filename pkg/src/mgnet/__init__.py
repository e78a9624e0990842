"""Metagenomic read classification from k-mer graphs and pseudo-images."""

__version__ = "0.1.0"
